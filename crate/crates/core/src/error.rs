//! Error type shared across the core crate.

use alloc::string::String;
use core::fmt;

/// Errors produced by core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// An argument violated a documented precondition.
    InvalidInput(String),
    /// Array shapes do not line up.
    ShapeMismatch(String),
    /// A value that must be finite was NaN or infinite.
    NonFinite(String),
    /// A linear solve or factorization hit a (near-)singular matrix.
    Singular(String),
    /// A configuration violated its invariants.
    Config(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::InvalidInput(m) => write!(f, "invalid input: {m}"),
            CoreError::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            CoreError::NonFinite(m) => write!(f, "non-finite value: {m}"),
            CoreError::Singular(m) => write!(f, "singular matrix: {m}"),
            CoreError::Config(m) => write!(f, "invalid config: {m}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;

/// Shorthand for building an `InvalidInput` error.
pub fn invalid(msg: impl Into<String>) -> CoreError {
    CoreError::InvalidInput(msg.into())
}

/// Shorthand for building a `ShapeMismatch` error.
pub fn shape(msg: impl Into<String>) -> CoreError {
    CoreError::ShapeMismatch(msg.into())
}
