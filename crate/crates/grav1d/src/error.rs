//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by series arithmetic and the modules built on it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Two operands carry different truncation specs.
    #[error("truncation specs differ: {0} vs {1}")]
    SpecMismatch(String, String),
    /// A coupling index lies outside `0..=kmax`.
    #[error("coupling index {index} outside 0..={kmax}")]
    IndexOutOfRange { index: usize, kmax: usize },
    /// A precondition on the input series is violated.
    #[error("domain error: {0}")]
    Domain(String),
    /// The series has no invertible constant term.
    #[error("series is not a unit: {0}")]
    NotAUnit(String),
    /// A template symbol has no binding.
    #[error("unbound symbol {0}")]
    UnboundSymbol(String),
    /// A reciprocal or logarithm argument has a nonzero constant term.
    #[error("argument of a formal reciprocal is not nilpotent: {0}")]
    NonNilpotent(String),
    /// A generated term does not fit the λ-window.
    #[error("term {0} falls outside the lambda window")]
    WindowOverflow(String),
    /// The requested quantity needs a larger truncation than the one supplied.
    #[error("insufficient truncation: {0}")]
    InsufficientTruncation(String),
    /// Outer series with different slot layouts were combined.
    #[error("slot layouts differ: {0}")]
    SlotMismatch(String),
    /// A requested size exceeds the supported desk-scale limit.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    /// Malformed serialized input.
    #[error("parse error: {0}")]
    Parse(String),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
