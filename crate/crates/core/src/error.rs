use thiserror::Error;

use crate::harness::RunResult;
use crate::optim::StepRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("task generation error: {0}")]
    Generation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A training step produced a non-finite loss, gradient or update.
    #[error("non-finite value at step {}: {reason}", record.step_index)]
    NonFiniteStep { reason: String, record: Box<StepRecord> },

    /// One or more runs of a multi-seed batch aborted. Completed runs are kept.
    #[error("{} of {} runs aborted (first: {})", failures.len(), failures.len() + completed.len(), failures.first().map(|f| f.1.as_str()).unwrap_or("?"))]
    BatchAborted { completed: Vec<RunResult>, failures: Vec<(u64, String)> },

    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by a non-finite value during optimization.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) | Error::NonFiniteStep { .. } => true,
            Error::BatchAborted { .. } => true,
            _ => false,
        }
    }
}
