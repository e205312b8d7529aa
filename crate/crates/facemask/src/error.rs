use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("image error: {message}")]
    Image { message: String },

    #[error("{path}: image error: {message}")]
    ImageFile { path: PathBuf, message: String },

    #[error("embedding store error: {message}")]
    Embedding { message: String },

    #[error("no embedding stored for key {key:?}")]
    MissingEmbedding { key: String },

    #[error("checkpoint error: {message}")]
    Checkpoint { message: String },

    #[error("boxes file line {line}: {message}")]
    Boxes { line: usize, message: String },

    #[error("invalid configuration: {message}")]
    Config { message: String },

    #[error("shape mismatch: {message}")]
    Shape { message: String },

    #[error("{split} split is empty")]
    EmptySplit { split: String },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(message: impl Into<String>) -> Self {
        Error::Image {
            message: message.into(),
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config {
            message: message.into(),
        }
    }

    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Error::Shape {
            message: message.into(),
        }
    }
}
