use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular configuration: {0}")]
    SingularConfiguration(String),
    #[error("insufficient support: {0}")]
    InsufficientSupport(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input size {height}x{width} is not divisible by {divisor}")]
    SizeNotDivisible {
        height: usize,
        width: usize,
        divisor: usize,
    },
    #[error("recurrent state is not initialized")]
    UninitializedState,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("object leaves the frame at t={frame}")]
    ObjectLeavesFrame { frame: usize },
    #[error("missing labels at scale {0}")]
    MissingLabels(usize),
    #[error("dataset validation failed for {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dataset(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by invalid user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::SizeNotDivisible { .. }
                | Error::Dataset { .. }
                | Error::Parse(_)
                | Error::Checkpoint(_)
                | Error::ShapeMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
