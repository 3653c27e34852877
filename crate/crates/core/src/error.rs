//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} file {path}: {reason}")]
    PnmFormat {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("bad manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted: non-finite loss at batch {batch}")]
    TrainDiverged { batch: usize },

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGrad { name: String },

    #[error("selection error: {0}")]
    Selection(String),

    #[error("AUC undefined: both classes must be present")]
    UndefinedAuc,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
