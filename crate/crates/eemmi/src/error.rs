use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("word not in lexicon: {0}")]
    OutOfVocabulary(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("state `{0}` has no observed outgoing transitions and smoothing is disabled")]
    EmptyLmRow(String),

    #[error("transcript infeasible: needs at least {needed} frames, got {got}")]
    InfeasibleTranscript { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("instance too large to enumerate: {0}")]
    TooLarge(String),

    #[error("beam search pruned all tokens (beam too tight)")]
    EmptyBeam,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
