use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected length {expected}, got {actual}")]
    Length {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: index {index} out of range for {bound} entries")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("masked softmax: every key position is masked")]
    NoValidKeys,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("invalid window: {0}")]
    Window(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    SerdeJson(#[from] serde_json::Error),

    #[error("{path}: {source}")]
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
}
