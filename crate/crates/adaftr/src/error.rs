//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch between tensor operands.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error at line {line}: {msg}")]
    Data { line: usize, msg: String },

    /// Training aborted (non-finite loss or gradient).
    #[error("training error: {0}")]
    Train(String),

    /// Checkpoint serialization problem.
    #[error("checkpoint error in {path}: {msg}")]
    Checkpoint { path: String, msg: String },

    /// Metric is undefined on the given inputs (e.g. single-class labels).
    #[error("undefined metric: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
