use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Structural problem in an on-disk file (bad magic, wrong version, truncation).
    #[error("format error: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero variance in {0}; correlation undefined")]
    ZeroVariance(&'static str),
}

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

    /// True for failures caused by the filesystem rather than by the content
    /// of the inputs. The CLI maps these to exit code 2.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }
}
