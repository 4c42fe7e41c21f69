use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use smartjourney_core::dataset::PreparedDataset;
use smartjourney_core::pipeline::{default_registry, ingest as run_ingest, read_prepared_file, write_prepared_file, WeatherScaling};
use smartjourney_core::time;
use smartjourney_core::training::{evaluate as run_evaluate, forecast_at, load_artifact, save_artifact, train_model, TrainConfig};
use smartjourney_service::{router, AppState, ServiceConfig, StartupError};

use crate::args::{EvaluateArgs, ForecastArgs, IngestArgs, ServeArgs, TrainArgs};

/// A runtime failure, reported on stderr as `{"error", "message"}` with exit code 1.
#[derive(Debug)]
pub struct Failure {
    pub code: &'static str,
    pub message: String,
}

impl Failure {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<smartjourney_core::Error> for Failure {
    fn from(e: smartjourney_core::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<StartupError> for Failure {
    fn from(e: StartupError) -> Self {
        let code = match &e {
            StartupError::Artifact { source, .. } | StartupError::Prepared { source, .. } => source.code(),
            StartupError::ModelsDir { .. } => "io_error",
        };
        Self::new(code, e.to_string())
    }
}

type Outcome = Result<Option<String>, Failure>;

fn json(value: &impl Serialize) -> Outcome {
    Ok(Some(serde_json::to_string_pretty(value).expect("output serializes")))
}

/// Expand each pattern; a pattern matching nothing is an error.
fn expand(patterns: &[String], what: &str) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in patterns {
        let paths = glob::glob(p).map_err(|e| Failure::new("invalid_argument", format!("bad {what} pattern {p:?}: {e}")))?;
        let mut matched: Vec<PathBuf> = paths.filter_map(|r| r.ok()).filter(|p| p.is_file()).collect();
        if matched.is_empty() {
            return Err(Failure::new("io_error", format!("no {what} file matches {p:?}")));
        }
        matched.sort();
        out.extend(matched);
    }
    Ok(out)
}

pub fn ingest(a: IngestArgs) -> Outcome {
    let traffic = expand(&a.traffic, "traffic")?;
    let weather = expand(&a.weather, "weather")?;
    log::info!("ingesting {} traffic and {} weather files", traffic.len(), weather.len());
    let out = run_ingest(&traffic, &weather, &default_registry(), WeatherScaling::Auto)?;
    write_prepared_file(&out.rows, &a.out)?;
    log::info!("wrote {} prepared rows to {}", out.rows.len(), a.out.display());
    json(&out.summary)
}

pub fn train(a: TrainArgs, seed: u64) -> Outcome {
    let rows = read_prepared_file(&a.prepared)?;
    let mut config = TrainConfig::new(a.model.into(), a.district.clone());
    config.seed = seed;
    if let Some(n) = a.epochs {
        config.set_iterations(n);
    }
    if let Some(lr) = a.learning_rate {
        config.neural.learning_rate = lr;
    }
    let ds = PreparedDataset::build(&rows, &a.district, &config.dataset)?;
    log::info!(
        "training {} for {} on {} / {} / {} samples",
        config.model_type,
        a.district,
        ds.train().len(),
        ds.val().len(),
        ds.test().len()
    );
    let artifact = train_model(&ds, &config)?;
    save_artifact(&artifact, &a.out)?;
    log::info!(
        "{} iterations, best {:?}; artifact written to {}",
        artifact.training.iterations,
        artifact.training.best_iteration,
        a.out.display()
    );
    json(&artifact.test_metrics)
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let artifact = load_artifact(&a.artifact)?;
    let rows = read_prepared_file(&a.prepared)?;
    let ds = PreparedDataset::build_with_normalization(
        &rows,
        &artifact.district,
        &artifact.train_config.dataset,
        artifact.normalization.clone(),
    )?;
    json(&run_evaluate(&artifact, &ds)?)
}

pub fn forecast(a: ForecastArgs) -> Outcome {
    let artifact = load_artifact(&a.artifact)?;
    let start = a
        .start
        .as_deref()
        .map(|s| time::parse_hour(s).ok_or_else(|| Failure::new("invalid_timestamp", format!("cannot parse --start {s:?}"))))
        .transpose()?;
    let rows = read_prepared_file(&a.prepared)?;
    json(&forecast_at(&artifact, &rows, start, a.horizon)?)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutting down");
}

pub fn serve(a: ServeArgs) -> Outcome {
    let mut config = ServiceConfig::new(&a.models_dir);
    config.prepared = a.prepared;
    if !a.cors_origins.is_empty() {
        config.cors_origins = a.cors_origins;
    }
    let state = AppState::load(&config)?;
    log::info!("{} artifacts loaded", state.artifacts.len());
    let app = router(Arc::new(state), &config.cors_origins);

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new("io_error", e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| Failure::new("io_error", format!("cannot bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(|e| Failure::new("io_error", e.to_string()))?;
        // Announced on stdout so scripts can find an ephemeral port.
        println!("{}", serde_json::json!({ "listening": addr.to_string() }));
        log::info!("listening on http://{addr}");
        smartjourney_service::serve(listener, app, shutdown_signal())
            .await
            .map_err(|e| Failure::new("io_error", e.to_string()))
    })?;
    Ok(None)
}
