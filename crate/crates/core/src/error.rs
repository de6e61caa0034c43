use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid probability distribution: {0}")]
    Distribution(String),

    #[error("cannot tokenize {0:?}: character is not in the vocabulary")]
    UnknownChar(char),

    #[error("sequence of {len} tokens exceeds the context window of {window}")]
    ContextOverflow { len: usize, window: usize },

    #[error("generation produced an empty response after {attempts} attempts")]
    EmptyGeneration { attempts: usize },

    #[error("training step {step} failed: {message}")]
    Step { step: usize, message: String },

    #[error("request rejected: {0}")]
    Rejected(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
