use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the fuzzing stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("catalog record {record}: field `{field}`: {message}")]
    Schema {
        record: String,
        field: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("class index {0} does not fit in a 6-bit slot")]
    SlotRange(usize),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("backend does not support {0}")]
    Capability(String),

    #[error("backend failure: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
