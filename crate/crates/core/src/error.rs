use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Utf8 { path: PathBuf, offset: usize },
    #[error("corpus is empty after tokenization")]
    EmptyCorpus,
    #[error("empty input")]
    EmptyInput,
    #[error("unknown token {token:?} at position {position}")]
    UnknownToken { token: String, position: usize },
    #[error("token {0:?} is reserved")]
    ReservedToken(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidTokenId { id: usize, size: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("misaligned labels: {0}")]
    MisalignedLabels(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
