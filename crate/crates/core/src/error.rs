use thiserror::Error;

/// Errors raised while reading or validating corpora and alignment files.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("line {line}: invalid tag {tag:?} (expected O, B-<cat> or I-<cat>)")]
    InvalidTag { line: usize, tag: String },
    #[error("line {line}: invalid JSONL record: {message}")]
    Jsonl { line: usize, message: String },
    #[error("sentence count mismatch: source={source_count} target={target_count}")]
    CountMismatch { source_count: usize, target_count: usize },
    #[error("alignment item {item:?} at offset {offset} is not of the form i-j")]
    Pharaoh { item: String, offset: usize },
    #[error("invalid span [{start}, {end}) over a sentence of {len} tokens")]
    SpanBounds { start: usize, end: usize, len: usize },
    #[error("spans [{a_start}, {a_end}) and [{b_start}, {b_end}) overlap or are out of order")]
    SpanOrder {
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("parallel pair {id:?} has an empty target sentence")]
    EmptyTarget { id: String },
    #[error("{0}")]
    Other(String),
}

/// Configuration problems: category maps, unknown categories, bad parameters.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("category {0:?} is not a verbalized name in the category map")]
    UnknownCategory(String),
    #[error("verbalized category {0:?} must be non-empty and free of '<', '>' and whitespace")]
    BadCategoryName(String),
    #[error("raw tags {first:?} and {second:?} both verbalize to {name:?}")]
    NotInjective {
        first: String,
        second: String,
        name: String,
    },
    #[error("invalid category map line {line}: {message}")]
    MapSyntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Failures reported by a generator, scorer or embedding backend.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Network or server-side failure; the request may succeed if repeated.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("backend rejected request: {0}")]
    Rejected(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// A score that cannot be computed for one (span, candidate) cell.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("empty text cannot be scored")]
    EmptyText,
    #[error("degenerate score: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("sentence count mismatch: predicted={predicted} gold={gold}")]
    CountMismatch { predicted: usize, gold: usize },
    #[error("sentence {index}: predicted id {predicted:?} does not match gold id {gold:?}")]
    IdMismatch {
        index: usize,
        predicted: String,
        gold: String,
    },
    #[error("candidate counts must be positive, strictly ascending and distinct: {0:?}")]
    BadCounts(Vec<usize>),
}

/// Top-level error for pipeline runs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
