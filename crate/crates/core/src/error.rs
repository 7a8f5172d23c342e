use thiserror::Error;

use crate::network::Checkpoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (zero norm, length mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A mini-batch without positive or without negative pairs.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Training stopped early; carries the last checkpoint whose parameters were all finite.
    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted {
        step: u64,
        reason: String,
        last_good: Box<Checkpoint>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
