use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hash length mismatch: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid hash length {0}: must be a positive multiple of 8")]
    InvalidBits(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Empty(&'static str),

    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("malformed file at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("group {0}: no center")]
    MissingCenter(u32),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(&'static str),

    #[error("training diverged at iteration {iter}: loss = {loss}")]
    NonFinite { iter: usize, loss: f64 },

    #[error("io error on {path}: {source}")]
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

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
