use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("L_dist requires reference parameters")]
    MissingReference,

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("{file}: bad magic 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic {
        file: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{file}: truncated at field `{field}`")]
    Truncated { file: &'static str, field: &'static str },

    #[error("count mismatch: images file has {images} items, labels file has {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("trigger `{name}` does not fit: {reason}")]
    TriggerBounds { name: String, reason: String },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("numeric failure at round {round}: {what}")]
    Diverged { round: u32, what: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
