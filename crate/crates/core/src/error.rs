use std::path::PathBuf;

use savp_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: u64 },
    #[error("{0} head produced a non-finite value")]
    NonFiniteHead(&'static str),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("unknown parameter {0}")]
    MissingParam(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Format(_) => 3,
            Error::NonFinite { .. } | Error::NonFiniteHead(_) | Error::NonFiniteGradient(_) => 4,
            Error::Tensor(TensorError::ShapeMismatch { .. }) | Error::Mismatch(_) | Error::MissingParam(_) => 5,
            Error::Tensor(_) => 4,
        }
    }
}
