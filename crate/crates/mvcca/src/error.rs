//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed in something that violates an operation's preconditions
    /// (shape mismatch, out-of-range parameter, non-finite entries, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A covariance (or Gram) matrix is numerically singular and no ridge
    /// was requested to regularize it.
    #[error("ill-conditioned problem: {0}")]
    IllConditioned(String),

    /// A non-finite value showed up where the computation cannot continue.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An internal protocol was broken, e.g. a backward pass was given a
    /// tape recorded by a different network or parameter version.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file (checkpoint, dataset CSV, manifest) does not match the
    /// documented layout.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
