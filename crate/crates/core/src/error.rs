use std::path::PathBuf;

use thiserror::Error;

use crate::mapping::LinearMap;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate token {0:?}")]
    DuplicateToken(String),

    #[error("zero vector for token {0:?}")]
    ZeroVector(String),

    #[error("non-finite value in row {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("synthetic dictionary is empty at refinement iteration {iteration}")]
    EmptyDictionary { iteration: usize },

    #[error("training diverged at epoch {epoch}; last finite checkpoint retained")]
    Diverged { epoch: usize, checkpoint: Box<LinearMap> },

    #[error("retrieval cache built for map version {cached}, but map is version {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}
