//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset construction, ingestion, training and metrics.
#[derive(Debug, Error)]
pub enum UgssError {
    /// Input data violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A metric was requested on inputs for which it is undefined.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// The training loop aborted (divergence, non-finite state).
    #[error("training aborted: {0}")]
    Training(String),

    /// A non-finite value appeared inside the recurrent unroll.
    #[error("non-finite value in `{tensor}` at step {step}")]
    NonFinite { step: usize, tensor: String },

    /// On-disk container or checkpoint could not be decoded.
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl UgssError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        UgssError::Validation(msg.into())
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        UgssError::Format { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, UgssError>;
