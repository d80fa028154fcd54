//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid grid specification (counts, bounds).
    Grid(String),
    /// Shape mismatch between a parameter vector, spec or matrix.
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },
    /// A non-finite value appeared during evaluation; `context` names the site.
    NonFinite { context: String },
    /// Input outside the mathematical domain of an operation.
    Domain(String),
    /// Invalid run configuration or CLI usage.
    Config(String),
    /// Empty node set where at least one element is required.
    Empty(String),
    /// Checkpoint or manifest inconsistency.
    Checkpoint(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Grid(msg) => write!(f, "invalid grid: {}", msg),
            Error::Dimension {
                context,
                expected,
                got,
            } => write!(f, "dimension mismatch in {}: expected {}, got {}", context, expected, got),
            Error::NonFinite { context } => write!(f, "non-finite value in {}", context),
            Error::Domain(msg) => write!(f, "domain error: {}", msg),
            Error::Config(msg) => write!(f, "configuration error: {}", msg),
            Error::Empty(msg) => write!(f, "empty set: {}", msg),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {}", msg),
            Error::Io(e) => write!(f, "io error: {}", e),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
