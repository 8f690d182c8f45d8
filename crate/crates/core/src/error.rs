use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation stack.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a model function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or incomplete configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The integrator produced a non-finite state or an undershoot beyond tolerance.
    #[error("integration fault: {0}")]
    Integration(String),

    #[error("plant fault: {0}")]
    Plant(String),

    #[error("controller fault: {0}")]
    Controller(String),

    /// A malformed input file; `line` is 1-based and counts the header.
    #[error("{path}:{line}: {msg}")]
    Load { path: String, line: usize, msg: String },

    #[error("run aborted at step {step}: {cause}")]
    Aborted { step: usize, cause: Box<Error> },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
