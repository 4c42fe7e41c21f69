//! Per-district training, evaluation and persistence for all model families.

pub mod artifact;
pub mod forecast;
mod neural;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetConfig, NormalizationParams, PreparedDataset, WindowedSample, NUM_FEATURES, TARGET_FEATURE};
use crate::error::{Error, Result};
use crate::gbdt::{tabular_features, train_boosting, BoostingConfig, GbdtEnsemble, TabularData};
use crate::lstm::LstmNetwork;
use crate::metrics::{evaluation_metrics, MetricReport, DEFAULT_MAPE_FLOOR};
use crate::neural::optim::{TrainingSchedule, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM};
use crate::neural::{LossConfig, Network};
use crate::transformer::TransformerNetwork;

pub use artifact::{load_artifact, save_artifact, ModelArtifact, FORMAT_VERSION};
pub use forecast::{forecast, forecast_at, history_window, Forecast, ForecastPoint, DEFAULT_HORIZON, MAX_HORIZON};
pub use neural::NeuralSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelType {
    Lstm,
    Transformer,
    Gbdt,
}

impl ModelType {
    pub const ALL: [ModelType; 3] = [ModelType::Lstm, ModelType::Transformer, ModelType::Gbdt];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelType::Lstm => "lstm",
            ModelType::Transformer => "transformer",
            ModelType::Gbdt => "gbdt",
        }
    }

    pub fn is_neural(self) -> bool {
        self != ModelType::Gbdt
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelType::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model type '{s}' (expected lstm, transformer or gbdt)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub schedule: TrainingSchedule,
    /// Transformer only.
    pub positional_encoding: bool,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            batch_size: 32,
            loss: LossConfig::default(),
            schedule: TrainingSchedule::default(),
            positional_encoding: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model_type: ModelType,
    pub district: String,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub neural: NeuralConfig,
    pub boosting: BoostingConfig,
    pub mape_floor: f64,
}

impl TrainConfig {
    pub fn new(model_type: ModelType, district: impl Into<String>) -> Self {
        Self {
            model_type,
            district: district.into(),
            seed: 0,
            dataset: DatasetConfig::default(),
            neural: NeuralConfig::default(),
            boosting: BoostingConfig::default(),
            mape_floor: DEFAULT_MAPE_FLOOR,
        }
    }

    /// Epoch budget for neural models, round budget for gbdt.
    pub fn set_iterations(&mut self, n: usize) {
        match self.model_type {
            ModelType::Gbdt => self.boosting.num_rounds = n,
            _ => self.neural.schedule.max_epochs = n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neural.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.neural.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        self.neural.schedule.validate()?;
        if self.model_type == ModelType::Gbdt {
            self.boosting.validate()?;
        }
        Ok(())
    }
}

/// A trained model of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lstm(LstmNetwork),
    Transformer(TransformerNetwork),
    Gbdt(GbdtEnsemble),
}

const PREDICT_CHUNK: usize = 64;

impl Model {
    pub fn model_type(&self) -> ModelType {
        match self {
            Model::Lstm(_) => ModelType::Lstm,
            Model::Transformer(_) => ModelType::Transformer,
            Model::Gbdt(_) => ModelType::Gbdt,
        }
    }

    /// Normalized single-step predictions.
    pub fn predict(&self, samples: &[&WindowedSample]) -> Result<Vec<f64>> {
        match self {
            Model::Lstm(net) => predict_network(net, samples),
            Model::Transformer(net) => predict_network(net, samples),
            Model::Gbdt(e) => samples.iter().map(|s| e.predict(&tabular_features(s))).collect(),
        }
    }
}

fn predict_network<N: Network>(net: &N, samples: &[&WindowedSample]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let windows: Vec<_> = chunk.iter().map(|s| &s.inputs).collect();
        out.extend(net.predict_batch(&windows)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CongestionLevel {
    Low,
    Medium,
    High,
}

/// Vehicle counts at the 33.3% and 66.7% quantiles of the training period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionThresholds {
    pub low_max: f64,
    pub medium_max: f64,
}

impl CongestionThresholds {
    pub fn fit(vehicle_counts: &[f64]) -> Result<Self> {
        if vehicle_counts.is_empty() {
            return Err(Error::Empty("congestion reference counts"));
        }
        let mut v = vehicle_counts.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            low_max: quantile(&v, 0.333),
            medium_max: quantile(&v, 0.667),
        })
    }

    pub fn level(&self, vehicles: f64) -> CongestionLevel {
        if vehicles < self.low_max {
            CongestionLevel::Low
        } else if vehicles < self.medium_max {
            CongestionLevel::Medium
        } else {
            CongestionLevel::High
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// Epochs (neural) or boosting rounds actually run.
    pub iterations: usize,
    /// Epoch or round whose weights were kept, if any ran.
    pub best_iteration: Option<usize>,
    pub validation_trace: Vec<f64>,
}

fn check_dataset(ds: &PreparedDataset) -> Result<()> {
    if ds.train().is_empty() || ds.val().is_empty() || ds.test().is_empty() {
        return Err(Error::Empty("dataset split"));
    }
    if ds.normalization.num_features() != NUM_FEATURES || ds.train()[0].inputs.cols() != NUM_FEATURES {
        return Err(Error::FeatureMismatch(format!("expected {NUM_FEATURES} features per hour")));
    }
    Ok(())
}

/// Train one model on a prepared per-district dataset and package it with
/// its normalization, congestion thresholds and test metrics.
pub fn train_model(ds: &PreparedDataset, config: &TrainConfig) -> Result<ModelArtifact> {
    config.validate()?;
    check_dataset(ds)?;
    if ds.district != config.district {
        return Err(Error::InvalidArgument(format!(
            "dataset is for {} but the config names {}",
            ds.district, config.district
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (model, training) = match config.model_type {
        ModelType::Lstm => {
            let mut net = LstmNetwork::new(NUM_FEATURES, &mut rng);
            let s = neural::train_network(&mut net, ds, &config.neural, &mut rng)?;
            (Model::Lstm(net), s.into())
        }
        ModelType::Transformer => {
            let mut net = TransformerNetwork::new(NUM_FEATURES, config.neural.positional_encoding, &mut rng);
            let s = neural::train_network(&mut net, ds, &config.neural, &mut rng)?;
            (Model::Transformer(net), s.into())
        }
        ModelType::Gbdt => {
            let train = TabularData::from_samples(ds.train())?;
            let val = TabularData::from_samples(ds.val())?;
            let out = train_boosting(&train, &val, &config.boosting, config.seed)?;
            let summary = TrainingSummary {
                iterations: out.validation_rmse.len(),
                best_iteration: Some(out.best_round),
                validation_trace: out.validation_rmse,
            };
            (Model::Gbdt(out.ensemble), summary)
        }
    };
    let test_metrics = test_metrics(&model, ds, config.mape_floor)?;
    let train_counts: Vec<f64> = ds.train().iter().map(|s| ds.normalization.invert_target(s.target)).collect();
    Ok(ModelArtifact {
        format_version: FORMAT_VERSION,
        model_type: config.model_type,
        district: ds.district.clone(),
        created_at: artifact::creation_timestamp(),
        train_config: config.clone(),
        normalization: ds.normalization.clone(),
        congestion: CongestionThresholds::fit(&train_counts)?,
        test_metrics,
        training,
        model,
    })
}

/// Normalized test-split predictions.
pub fn test_predictions(model: &Model, ds: &PreparedDataset) -> Result<Vec<f64>> {
    let samples: Vec<&WindowedSample> = ds.test().iter().collect();
    model.predict(&samples)
}

fn metrics_for(predicted: &[f64], ds: &PreparedDataset, floor: f64) -> Result<MetricReport> {
    let actual: Vec<f64> = ds.test().iter().map(|s| s.target).collect();
    let norm = &ds.normalization;
    let actual_v: Vec<f64> = actual.iter().map(|&v| norm.invert_target(v)).collect();
    let pred_v: Vec<f64> = predicted.iter().map(|&v| norm.invert_target(v)).collect();
    evaluation_metrics(&actual, predicted, &actual_v, &pred_v, floor)
}

fn test_metrics(model: &Model, ds: &PreparedDataset, floor: f64) -> Result<MetricReport> {
    metrics_for(&test_predictions(model, ds)?, ds, floor)
}

fn check_normalization(expected: &NormalizationParams, ds: &PreparedDataset) -> Result<()> {
    if expected.features != ds.normalization.features {
        return Err(Error::FeatureMismatch(format!(
            "artifact features {:?}, dataset features {:?}",
            expected.features, ds.normalization.features
        )));
    }
    if *expected != ds.normalization {
        return Err(Error::FeatureMismatch(
            "dataset was normalized with different parameters; rebuild it with the artifact's normalization".into(),
        ));
    }
    Ok(())
}

/// Single-step test-split metrics for a stored model.
pub fn evaluate(artifact: &ModelArtifact, ds: &PreparedDataset) -> Result<MetricReport> {
    check_normalization(&artifact.normalization, ds)?;
    if ds.window != artifact.train_config.dataset.window {
        return Err(Error::FeatureMismatch(format!(
            "artifact window {} vs dataset window {}",
            artifact.train_config.dataset.window, ds.window
        )));
    }
    if ds.test().is_empty() {
        return Err(Error::Empty("test split"));
    }
    test_metrics(&artifact.model, ds, artifact.train_config.mape_floor)
}

/// Predict each test hour with the count observed `season` hours earlier.
pub fn seasonal_naive_predictions(ds: &PreparedDataset, season: usize) -> Result<Vec<f64>> {
    if season == 0 || ds.window < season {
        return Err(Error::InvalidArgument(format!(
            "seasonal lag {season} needs a window of at least that many hours (have {})",
            ds.window
        )));
    }
    Ok(ds
        .test()
        .iter()
        .map(|s| s.inputs.get2(ds.window - season, TARGET_FEATURE))
        .collect())
}

/// Test metrics of the seasonal-naive baseline with lag `season`.
pub fn seasonal_naive_metrics(ds: &PreparedDataset, season: usize, mape_floor: f64) -> Result<MetricReport> {
    if ds.test().is_empty() {
        return Err(Error::Empty("test split"));
    }
    metrics_for(&seasonal_naive_predictions(ds, season)?, ds, mape_floor)
}
