//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by the estimation stack.
#[derive(Debug)]
pub enum Error {
    /// Invalid inputs: dimension mismatches, parameters outside their
    /// admissible region, malformed data files.
    Validation(String),
    /// A numerical routine could not produce a usable result (singular
    /// innovation covariance, non-finite likelihood, failed decomposition).
    Computation(String),
    /// An iterative solver ran out of iterations; carries the residual
    /// norm it got stuck at.
    Convergence { context: String, residual: f64 },
    /// Underlying I/O failure while reading or writing data files.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Computation(msg) => write!(f, "computation error: {msg}"),
            Error::Convergence { context, residual } => {
                write!(f, "{context}: no convergence (residual {residual:.3e})")
            }
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for a validation failure.
pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}

/// Shorthand for a computation failure.
pub(crate) fn numeric<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Computation(msg.into()))
}
