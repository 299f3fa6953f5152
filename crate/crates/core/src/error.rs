//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("csv error: {msg}")]
    CsvFile { msg: String },

    #[error("csv error at row {row}: {msg}")]
    CsvRow { row: usize, msg: String },

    #[error("csv error at row {row}, column {col}: {msg}")]
    CsvCell { row: usize, col: usize, msg: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("pruned instantaneous graph contains a cycle: {0}")]
    CyclicAfterPruning(String),

    #[error("phase {phase}: {source}")]
    Phase {
        phase: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dims(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn in_phase(self, phase: usize) -> Self {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }
}
