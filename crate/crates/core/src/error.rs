//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by decompositions, solvers, and file output.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix that must be inverted has no inverse.
    #[error("singular matrix: {0}")]
    Singular(String),
    /// Operand shapes are incompatible.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Input lies outside the domain of validity of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A structural decomposition does not exist for the given input.
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    /// Data supplied to a reconstruction is internally inconsistent.
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    /// Underlying file system failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed textual input.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
