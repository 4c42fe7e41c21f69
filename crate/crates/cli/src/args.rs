use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smartjourney_core::training::{ModelType, DEFAULT_HORIZON};

#[derive(Debug, Parser)]
#[command(name = "smartjourney", version, about = "District-level hourly traffic forecasting")]
pub struct Cli {
    /// Seed for every random draw (initialization, shuffling, subsampling).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Debug logging on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge raw traffic and weather CSVs into a prepared hourly CSV.
    Ingest(IngestArgs),
    /// Train one model for one district.
    Train(TrainArgs),
    /// Recompute test-split metrics for a stored model.
    Evaluate(EvaluateArgs),
    /// Multi-hour forecast from a stored model.
    Forecast(ForecastArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Lstm,
    Transformer,
    Gbdt,
}

impl From<ModelArg> for ModelType {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Lstm => ModelType::Lstm,
            ModelArg::Transformer => ModelType::Transformer,
            ModelArg::Gbdt => ModelType::Gbdt,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Traffic CSV paths or glob patterns.
    #[arg(long, required = true, num_args = 1..)]
    pub traffic: Vec<String>,
    /// Weather CSV paths or glob patterns.
    #[arg(long, required = true, num_args = 1..)]
    pub weather: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub district: String,
    #[arg(long)]
    pub prepared: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch budget (neural) or boosting rounds (gbdt).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the SGD learning rate (neural models).
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long)]
    pub prepared: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long)]
    pub prepared: PathBuf,
    /// Last observed hour; defaults to the newest row for the district.
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub models_dir: PathBuf,
    #[arg(long)]
    pub prepared: Option<PathBuf>,
    #[arg(long, env = "SMARTJOURNEY_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Allowed browser origin; repeat for several. Defaults to the local UI dev server.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}
