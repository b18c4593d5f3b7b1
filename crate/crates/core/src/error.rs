//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by tensor ops, the model, pipeline stages and file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes, naming both sides.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A parameter outside its documented domain.
    #[error("invalid parameter {name}: {message}")]
    Parameter { name: &'static str, message: String },

    /// Sequence longer than the model's maximum.
    #[error("sequence length {got} outside supported range 1..={max}")]
    SequenceLength { got: usize, max: usize },

    /// Operation called on a model with the wrong head.
    #[error("model configuration error: {0}")]
    Configuration(String),

    /// BCE with no selected positions.
    #[error("empty loss support: mask selects no positions")]
    EmptyLossSupport,

    /// Gradient missing for a parameter the optimizer must update.
    #[error("missing gradient for unfrozen parameter '{0}'")]
    MissingGradient(String),

    /// Character not in the tokenizer vocabulary.
    #[error("character {0:?} is not in the tokenizer vocabulary")]
    Vocabulary(char),

    /// A metric that is undefined for the given inputs.
    #[error("{metric} undefined: {message}")]
    UndefinedMetric {
        metric: &'static str,
        message: String,
    },

    /// Training diverged.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    /// Malformed record stream or checkpoint, with location.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Checkpoint payload inconsistent with its manifest or config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Internal invariant violated (labeling coverage, span bookkeeping).
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
