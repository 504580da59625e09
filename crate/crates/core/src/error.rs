use std::io;

/// Errors produced by the toolkit.
///
/// Variants are grouped by what went wrong rather than where, so front ends
/// can map them onto stable exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input file (bad magic, truncated payload, schema violation).
    #[error("format error: {0}")]
    Format(String),

    /// Camera metadata is inconsistent or violates its schema.
    #[error("metadata error: {0}")]
    Metadata(String),

    /// Invalid configuration or incompatible inputs (shape or size mismatch).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The operation produced nothing to work with.
    #[error("empty result: {0}")]
    EmptyResult(String),

    /// Rank deficiency, degenerate geometry or failed estimation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn metadata(msg: impl Into<String>) -> Self {
        Error::Metadata(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn empty(msg: impl Into<String>) -> Self {
        Error::EmptyResult(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Metadata(_) => "metadata",
            Error::InvalidInput(_) => "invalid_input",
            Error::EmptyResult(_) => "empty_result",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
        }
    }
}
