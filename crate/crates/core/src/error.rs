use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate embedding: vector has zero norm")]
    DegenerateEmbedding,
    #[error("degenerate pool: weighted sum of modalities is the zero vector")]
    DegeneratePool,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("insufficient classes: need at least {needed}, got {got}")]
    InsufficientClasses { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite gradient at index {0}")]
    NonFiniteGradient(usize),
    #[error("unknown query id {0}")]
    UnknownQuery(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
