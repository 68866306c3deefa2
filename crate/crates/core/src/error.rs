use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("non-finite loss {loss} at lr {lr} (batch: {})", batch_ids.join(","))]
    NonFiniteLoss {
        loss: f64,
        lr: f64,
        batch_ids: Vec<String>,
        epoch: Option<u32>,
    },

    #[error("key sets differ: {0}")]
    KeyMismatch(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("output path {0} already exists (pass overwrite to replace it)")]
    OutputExists(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
