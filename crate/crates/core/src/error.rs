use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Parse failures of individual sentences are
/// not errors; see [`crate::rx_parse::ParseFailure`].
#[derive(Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}, line {line}: {message}")]
    Format { file: String, line: usize, message: String },

    #[error("duplicate pair id `{0}`")]
    DuplicateId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("drug `{0}` is not a node of the graph")]
    UnknownDrug(String),

    #[error("embedding store has no vector for drug(s): {0}")]
    MissingEmbedding(String),

    #[error("non-finite loss at epoch {epoch} (learning rate {lr}): {what}")]
    Diverged { what: String, epoch: usize, lr: f64 },

    #[error("EMB1: {0}")]
    Emb1(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
