//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`CoreError`]. Variants are
//! grouped by failure domain so callers (notably the CLI) can map them onto
//! exit codes without string matching: configuration/validation problems,
//! numerical divergence, and oracle verdicts are all distinguishable.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A dataset or config file could not be parsed. Carries the 1-based
    /// line number where parsing stopped.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structurally valid input that violates a domain invariant
    /// (token out of range, empty dataset, weights that do not sum to 1, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was asked to combine models that do not share the
    /// required structure (mismatched vocabularies, enumerations, or
    /// parameter shapes).
    #[error("model mismatch: {0}")]
    Mismatch(String),

    /// A model family does not support the requested operation
    /// (e.g. explicit-reward training on a non-enumerable policy).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Training produced a non-finite parameter or gradient.
    #[error("divergence at step {step}: {message}")]
    Divergence { step: usize, message: String },

    /// An exact-check battery ran to completion and at least one check failed.
    #[error("oracle check failed: {0}")]
    OracleFailure(String),

    /// An instance is too large for exact enumeration; the caller should
    /// shrink it rather than wait forever.
    #[error("instance exceeds enumeration bound: {0}")]
    TooLarge(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CoreError {
    /// Shorthand for [`CoreError::Validation`].
    pub fn validation(msg: impl Into<String>) -> Self {
        CoreError::Validation(msg.into())
    }

    /// Shorthand for [`CoreError::Mismatch`].
    pub fn mismatch(msg: impl Into<String>) -> Self {
        CoreError::Mismatch(msg.into())
    }
}
