use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("not a probability distribution: {0}")]
    NotASimplex(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("unknown divergence kind `{0}`")]
    UnknownDivergence(String),

    #[error("token id {id} at position {position} is outside the vocabulary (size {vocab_size})")]
    OutOfVocabulary {
        position: usize,
        id: u32,
        vocab_size: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("invalid loss configuration: {0}")]
    LossSpec(String),

    #[error("label mismatch for pair_id {pair_id}: {original} vs {translated}")]
    LabelMismatch {
        pair_id: u64,
        original: String,
        translated: String,
    },

    #[error("a translation must keep the label of its original: {original} vs {translated}")]
    PairLabels { original: String, translated: String },

    #[error("pair_id {pair_id} has no counterpart in {side}")]
    MissingCounterpart { pair_id: u64, side: &'static str },

    #[error("line {line}: {reason}")]
    Record { line: usize, reason: String },

    #[error("invalid corpus spec: {0}")]
    CorpusSpec(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("record {index}: confidence {value} outside (0, 1]")]
    Confidence { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
