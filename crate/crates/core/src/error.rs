use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unsupported embodiment: {0}")]
    Embodiment(String),

    #[error("token {id} is outside the {segment} segment")]
    TokenRange { id: usize, segment: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
