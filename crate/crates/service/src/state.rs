use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use smartjourney_core::dataset::district_rows;
use smartjourney_core::pipeline::{default_registry, read_prepared_file, District, HourlyDistrictRow};
use smartjourney_core::training::{load_artifact, ModelArtifact, ModelType};

/// Origins the companion UI is served from during development.
pub const DEFAULT_CORS_ORIGINS: [&str; 2] = ["http://localhost:5173", "http://127.0.0.1:5173"];

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub models_dir: PathBuf,
    /// Prepared CSV backing `/v1/history` and forecast inputs.
    pub prepared: Option<PathBuf>,
    pub default_model: ModelType,
    pub cors_origins: Vec<String>,
    pub registry: Vec<District>,
}

impl ServiceConfig {
    pub fn new(models_dir: impl Into<PathBuf>) -> Self {
        Self {
            models_dir: models_dir.into(),
            prepared: None,
            default_model: ModelType::Gbdt,
            cors_origins: DEFAULT_CORS_ORIGINS.iter().map(|s| s.to_string()).collect(),
            registry: default_registry(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("cannot read models directory {path}: {source}")]
    ModelsDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("artifact {path} failed to load: {source}")]
    Artifact {
        path: PathBuf,
        #[source]
        source: smartjourney_core::Error,
    },
    #[error("prepared data {path} failed to load: {source}")]
    Prepared {
        path: PathBuf,
        #[source]
        source: smartjourney_core::Error,
    },
}

/// Everything a request can read. Built once at startup and never mutated.
#[derive(Debug)]
pub struct AppState {
    pub registry: Vec<District>,
    pub default_model: ModelType,
    pub artifacts: BTreeMap<(String, ModelType), ModelArtifact>,
    /// Per-district rows sorted by time.
    pub history: BTreeMap<String, Vec<HourlyDistrictRow>>,
}

impl AppState {
    pub fn load(config: &ServiceConfig) -> Result<Self, StartupError> {
        let artifacts = load_models(&config.models_dir)?;
        let history = match &config.prepared {
            Some(path) => {
                let rows = read_prepared_file(path).map_err(|source| StartupError::Prepared {
                    path: path.clone(),
                    source,
                })?;
                group_history(&rows)
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            registry: config.registry.clone(),
            default_model: config.default_model,
            artifacts,
            history,
        })
    }

    pub fn district(&self, name: &str) -> Option<&District> {
        self.registry.iter().find(|d| d.name == name)
    }

    pub fn models_for(&self, district: &str) -> Vec<ModelType> {
        ModelType::ALL
            .into_iter()
            .filter(|m| self.artifacts.contains_key(&(district.to_string(), *m)))
            .collect()
    }
}

fn group_history(rows: &[HourlyDistrictRow]) -> BTreeMap<String, Vec<HourlyDistrictRow>> {
    let mut names: Vec<&str> = rows.iter().map(|r| r.district.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    names.into_iter().map(|n| (n.to_string(), district_rows(rows, n))).collect()
}

/// Every `*.json` file in `dir`, in file-name order. When two files hold the
/// same (district, model) pair the later name wins.
fn load_models(dir: &Path) -> Result<BTreeMap<(String, ModelType), ModelArtifact>, StartupError> {
    let dir_err = |source| StartupError::ModelsDir {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(dir_err)? {
        let path = entry.map_err(dir_err)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = BTreeMap::new();
    for path in paths {
        let artifact = load_artifact(&path).map_err(|source| StartupError::Artifact {
            path: path.clone(),
            source,
        })?;
        log::info!("loaded {} model for {} from {}", artifact.model_type, artifact.district, path.display());
        let key = (artifact.district.clone(), artifact.model_type);
        if out.insert(key, artifact).is_some() {
            log::warn!("{} replaces an earlier artifact for the same district and model", path.display());
        }
    }
    Ok(out)
}
