use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;

use smartjourney_core::metrics::MetricReport;
use smartjourney_core::time::{self, Hour};
use smartjourney_core::training::{forecast_at, ForecastPoint, ModelType, DEFAULT_HORIZON, MAX_HORIZON};
use smartjourney_core::Error;

use crate::state::AppState;

type Shared = State<Arc<AppState>>;
type Params = Result<Query<HashMap<String, String>>, QueryRejection>;

/// A 4xx/5xx response with body `{"error": code, "message": text}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownDistrict(_) => StatusCode::NOT_FOUND,
            Error::InsufficientHistory(_) => StatusCode::CONFLICT,
            Error::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

pub(crate) fn routes() -> Router<Arc<AppState>> {
    Router::new()
        .route("/health", get(health))
        .route("/v1/districts", get(districts))
        .route("/v1/forecast", get(forecast))
        .route("/v1/models", get(models))
        .route("/v1/history", get(history))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "only GET is supported")
        })
}

fn params(p: Params) -> Result<HashMap<String, String>, ApiError> {
    p.map(|Query(q)| q)
        .map_err(|e| ApiError::bad_request("invalid_query", e.body_text()))
}

fn known_district<'a>(state: &'a AppState, q: &HashMap<String, String>) -> Result<&'a str, ApiError> {
    let name = q
        .get("district")
        .ok_or_else(|| ApiError::bad_request("invalid_query", "missing 'district' parameter"))?;
    state
        .district(name)
        .map(|d| d.name.as_str())
        .ok_or_else(|| Error::UnknownDistrict(name.clone()).into())
}

fn timestamp(q: &HashMap<String, String>, key: &str) -> Result<Option<Hour>, ApiError> {
    q.get(key)
        .map(|s| {
            time::parse_hour(s).ok_or_else(|| ApiError::bad_request("invalid_timestamp", format!("cannot parse {key}={s:?}")))
        })
        .transpose()
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Serialize)]
struct DistrictEntry<'a> {
    name: &'a str,
    latitude: f64,
    longitude: f64,
    models_available: Vec<ModelType>,
}

async fn districts(State(state): Shared) -> Response {
    let body: Vec<DistrictEntry> = state
        .registry
        .iter()
        .map(|d| DistrictEntry {
            name: &d.name,
            latitude: d.latitude,
            longitude: d.longitude,
            models_available: state.models_for(&d.name),
        })
        .collect();
    Json(body).into_response()
}

#[derive(Serialize)]
struct ModelEntry<'a> {
    model_type: ModelType,
    district: &'a str,
    created_at: &'a str,
    format_version: u32,
    test_metrics: MetricReport,
}

async fn models(State(state): Shared) -> Response {
    let body: Vec<ModelEntry> = state
        .artifacts
        .values()
        .map(|a| ModelEntry {
            model_type: a.model_type,
            district: &a.district,
            created_at: &a.created_at,
            format_version: a.format_version,
            test_metrics: a.test_metrics,
        })
        .collect();
    Json(body).into_response()
}

#[derive(Serialize)]
struct ForecastResponse {
    district: String,
    model: ModelType,
    /// The last observed hour the forecast was rolled out from.
    #[serde(with = "smartjourney_core::time::iso")]
    generated_at: Hour,
    points: Vec<ForecastPoint>,
}

async fn forecast(State(state): Shared, q: Params) -> Result<Json<ForecastResponse>, ApiError> {
    let q = params(q)?;
    let district = known_district(&state, &q)?.to_string();
    let model = match q.get("model") {
        Some(m) => m
            .parse::<ModelType>()
            .map_err(|e| ApiError::bad_request("invalid_model", e.to_string()))?,
        None => state.default_model,
    };
    let horizon = match q.get("horizon") {
        Some(h) => h
            .parse::<usize>()
            .ok()
            .filter(|h| (1..=MAX_HORIZON).contains(h))
            .ok_or_else(|| ApiError::bad_request("invalid_horizon", format!("horizon must be an integer from 1 to {MAX_HORIZON}")))?,
        None => DEFAULT_HORIZON,
    };
    let start = timestamp(&q, "start")?;
    if !state.artifacts.contains_key(&(district.clone(), model)) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "model_not_found",
            format!("no {model} model is loaded for {district}"),
        ));
    }

    let worker = Arc::clone(&state);
    let result = tokio::task::spawn_blocking(move || {
        let artifact = &worker.artifacts[&(district.clone(), model)];
        let rows = worker.history.get(&district).map(Vec::as_slice).unwrap_or(&[]);
        forecast_at(artifact, rows, start, horizon)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()))??;

    let origin = time::add_hours(result.points[0].timestamp, -1);
    Ok(Json(ForecastResponse {
        district: result.district,
        model: result.model,
        generated_at: origin,
        points: result.points,
    }))
}

#[derive(Serialize)]
struct HistoryPoint {
    #[serde(with = "smartjourney_core::time::iso")]
    ts: Hour,
    vehicles: f64,
}

async fn history(State(state): Shared, q: Params) -> Result<Json<Vec<HistoryPoint>>, ApiError> {
    let q = params(q)?;
    let district = known_district(&state, &q)?;
    let from = timestamp(&q, "from")?;
    let to = timestamp(&q, "to")?;
    if let (Some(f), Some(t)) = (from, to) {
        if f > t {
            return Err(ApiError::bad_request("invalid_range", "'from' is after 'to'"));
        }
    }
    let rows = state.history.get(district).map(Vec::as_slice).unwrap_or(&[]);
    let points = rows
        .iter()
        .filter(|r| from.is_none_or(|f| r.timestamp >= f) && to.is_none_or(|t| r.timestamp <= t))
        .map(|r| HistoryPoint {
            ts: r.timestamp,
            vehicles: r.num_vehicles,
        })
        .collect();
    Ok(Json(points))
}
