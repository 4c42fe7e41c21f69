use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("unrecognized header in {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown district: {0}")]
    UnknownDistrict(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("unsupported artifact format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("artifact checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("malformed artifact: {0}")]
    MalformedArtifact(String),

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, used in JSON error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io_error",
            Error::Csv(_) => "csv_error",
            Error::Header { .. } => "bad_header",
            Error::Shape(_) => "shape_mismatch",
            Error::Empty(_) => "empty_input",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnknownDistrict(_) => "unknown_district",
            Error::InsufficientHistory(_) => "insufficient_history",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
            Error::MalformedArtifact(_) => "malformed_artifact",
            Error::FeatureMismatch(_) => "feature_mismatch",
        }
    }
}
