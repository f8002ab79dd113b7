use thiserror::Error;

/// Errors raised anywhere in the detection and isolation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape { op: &'static str, expected: String, actual: String },
    #[error("non-finite value at index {index} in {context}")]
    NonFinite { context: String, index: usize },
    #[error("index {index} out of range for {what} of length {len}")]
    OutOfRange { what: &'static str, index: usize, len: usize },
    #[error("duplicate index {0}")]
    Duplicate(usize),
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("parse error at row {row}, column {column}: {reason}")]
    Parse { row: usize, column: usize, reason: String },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape { op, expected: expected.to_string(), actual: actual.to_string() }
    }

    /// True for failures caused by non-finite arithmetic (divergence, NaN).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
