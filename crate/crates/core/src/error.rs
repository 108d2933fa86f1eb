// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error types shared across the crate.

use crate::backend::BackendError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The context (or a document body) has no non-whitespace text.
    #[error("context is empty")]
    EmptyContext,

    #[error("index {index} out of range for {len} sentences")]
    BadIndex { index: usize, len: usize },

    #[error("template {template} cannot render {docs} document(s)")]
    TemplateMismatch { template: &'static str, docs: usize },

    #[error("query must be non-empty and must not occur inside the context")]
    QueryCollision,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("surrogate fit is singular: {0}")]
    SingularFit(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("top-N overlap has {found} layers, at least 3 are required")]
    InsufficientOverlap { found: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("call-count invariant violated for {method}: expected {expected}, measured {measured}")]
    CallCount {
        method: &'static str,
        expected: usize,
        measured: usize,
    },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
