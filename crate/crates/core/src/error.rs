use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("batch too small: batch-norm in train mode needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("state error: {0}")]
    State(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate record at line {line}: sensor {sensor} at {timestamp}")]
    Duplicate {
        line: usize,
        sensor: String,
        timestamp: String,
    },

    #[error("coordinate out of range for sensor {sensor}: lat {lat}, lon {lon}")]
    CoordinateRange { sensor: String, lat: f64, lon: f64 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate normalization range: min {min} >= max {max}")]
    DegenerateRange { min: f64, max: f64 },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("checkpoint version mismatch: {0}")]
    Version(String),

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
