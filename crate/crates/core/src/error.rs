use std::path::PathBuf;

/// Every failure the library reports, grouped by who is at fault.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or mismatched shapes.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value reached a place that requires finite input.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API was called out of contract.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// The surrogate has no variance, so the optimal weight is undefined.
    #[error("degenerate surrogate: {0}")]
    DegenerateSurrogate(String),

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
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
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

pub type Result<T> = std::result::Result<T, Error>;
