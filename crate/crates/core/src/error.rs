use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite value generated at index {index} ({case})")]
    NonFiniteGenerated { case: &'static str, index: usize },

    #[error("series too short: need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("missing or non-finite value at data row {0}")]
    BadRow(usize),

    #[error("series is empty")]
    EmptySeries,

    #[error("timestamps not strictly increasing at data row {0}")]
    NonMonotoneTimestamps(usize),

    #[error("cannot parse timestamp `{value}` at data row {row}")]
    BadTimestamp { row: usize, value: String },

    #[error("non-positive value {value} at index {index} under log transform")]
    NonPositiveLog { index: usize, value: f64 },

    #[error("daylight filter requested without timestamps")]
    MissingTimestamps,

    #[error("zero variance in training data")]
    ZeroVariance,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stale tape: parameters were updated after the forward pass")]
    StaleTape,

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged in {model} at epoch {epoch}")]
    Diverged { model: &'static str, epoch: usize },

    #[error("non-finite MAP objective in window {window}, restart {restart}")]
    MapNonFinite { window: usize, restart: usize },

    #[error("missing input: {0}")]
    Missing(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
