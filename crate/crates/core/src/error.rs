use std::path::PathBuf;

use thiserror::Error;

use crate::pool::SampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid budget: {0}")]
    Budget(String),

    #[error("sample {0} is not pending annotation")]
    NotPending(SampleId),

    #[error("sample {0} is not in the unlabeled pool")]
    NotUnlabeled(SampleId),

    #[error("sample {0} is already labeled")]
    AlreadyLabeled(SampleId),

    #[error("sample {0} appears more than once in the batch")]
    DuplicateId(SampleId),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("annotation paused: {outstanding} queried samples still unlabeled")]
    Paused { outstanding: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
