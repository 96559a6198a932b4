use thiserror::Error;

use crate::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },

    #[error("context of length {len} exceeds model maximum of {max}")]
    InputTooLong { len: usize, max: usize },

    #[error("invalid attention mask: {0}")]
    InvalidMask(String),

    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(String),

    #[error("distribution is degenerate after truncation")]
    DegenerateDistribution,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed draft tree: {0}")]
    MalformedTree(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("draft probability is zero for a drafted token")]
    ZeroDraftProbability,

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
