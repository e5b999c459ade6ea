use std::io;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric precondition was violated (zero norm, empty input, degenerate pair).
    #[error("domain error: {0}")]
    Domain(String),

    /// Nucleus sampling had no finite logit to draw from.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Text could not be parsed by the grammar or inverted by a style profile.
    #[error("format error: {0}")]
    Format(String),

    /// A character or token id is outside the model vocabulary.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// Invalid configuration or shape mismatch between components.
    #[error("config error: {0}")]
    Config(String),

    /// Adapters in a library do not share module structure.
    #[error("library error: {0}")]
    Library(String),

    /// Training diverged.
    #[error("training error: {0}")]
    Training(String),

    /// An artifact was produced against a different base model.
    #[error("compatibility error: expected base {expected}, found {found}")]
    Compatibility { expected: String, found: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
