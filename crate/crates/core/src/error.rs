use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain an operation accepts
    /// (out-of-range action, dimension mismatch).
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called in a state that does not permit it
    /// (stepping a finished episode, sampling an underfull buffer).
    #[error("usage error: {0}")]
    Usage(String),

    /// A watermark spec or run configuration is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite value.
    #[error("training fault at step {step}: {message}")]
    TrainingFault { step: u64, message: String },

    /// A model, spec or config file could not be decoded.
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
