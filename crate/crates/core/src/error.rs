use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-side precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Inconsistent sequence or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The request would need more memory or samples than allowed.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
