use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: u16, found: u16 },

    #[error("training diverged at epoch {epoch}: non-finite loss {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("build error: {0}")]
    Build(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Stable short code used in wire-level error responses and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
            Error::Training { .. } => "training",
            Error::Build(_) => "build",
            Error::Config(_) => "config",
            Error::Backend(_) => "backend",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
