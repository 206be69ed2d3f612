use thiserror::Error;

use crate::estimate::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or mismatched shapes supplied by the caller.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called on inputs that violate its preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite or overflowing value appeared during a computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite objective. Carries the partial report.
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        partial: Box<TrainReport>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit status for this error: 3 for numerical failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Diverged { .. } => 3,
            _ => 2,
        }
    }
}
