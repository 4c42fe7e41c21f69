//! Read-only HTTP JSON service over trained forecast artifacts.
//!
//! All state is loaded once at startup ([`AppState::load`]); a corrupt
//! artifact aborts startup rather than being skipped.

mod api;
mod state;

use std::future::Future;
use std::sync::Arc;

use axum::http::{HeaderValue, Method};
use axum::Router;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use api::ApiError;
pub use state::{AppState, ServiceConfig, StartupError, DEFAULT_CORS_ORIGINS};

/// Published JSON schemas, by endpoint name.
pub const SCHEMAS: [(&str, &str); 7] = [
    ("health", include_str!("../schemas/health.schema.json")),
    ("districts", include_str!("../schemas/districts.schema.json")),
    ("forecast", include_str!("../schemas/forecast.schema.json")),
    ("models", include_str!("../schemas/models.schema.json")),
    ("history", include_str!("../schemas/history.schema.json")),
    ("error", include_str!("../schemas/error.schema.json")),
    ("artifact", include_str!("../schemas/artifact.schema.json")),
];

pub fn schema(name: &str) -> Option<serde_json::Value> {
    SCHEMAS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| serde_json::from_str(text).expect("bundled schema is valid JSON"))
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    let origins: Vec<HeaderValue> = cors_origins
        .iter()
        .filter_map(|o| match HeaderValue::from_str(o) {
            Ok(v) => Some(v),
            Err(_) => {
                log::warn!("ignoring unusable CORS origin {o:?}");
                None
            }
        })
        .collect();
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET]);
    api::routes().with_state(state).layer(cors)
}

/// Serve until `shutdown` resolves, then finish in-flight requests.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
