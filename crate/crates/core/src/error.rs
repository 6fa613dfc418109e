use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed binary or text input. `offset` is a byte offset for binary
    /// formats and a 1-based line number for text formats.
    #[error("format error in {path} at {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    /// A quantity is undefined for the given input (e.g. silhouette of a
    /// single cluster).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Training diverged.
    #[error("run error at epoch {epoch}: {message}")]
    Run { epoch: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
