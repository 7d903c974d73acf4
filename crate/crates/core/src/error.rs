use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector{}", .0.as_deref().map(|t| format!(" for token '{t}'")).unwrap_or_default())]
    ZeroNorm(Option<String>),

    #[error("duplicate token '{0}'")]
    DuplicateToken(String),

    #[error("empty token")]
    EmptyToken,

    #[error("no candidates: effective vocabulary is empty")]
    EmptyVocabulary,

    #[error("token '{0}' is not in the embedding vocabulary")]
    OutOfVocabulary(String),

    #[error("normal equations are rank deficient (pivot {pivot:e} at column {column}); use a positive ridge")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("empty anchor vocabulary")]
    EmptyAnchors,

    #[error("conflicting records for year {year}, location '{location}'")]
    ConflictingRecords { year: i32, location: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("not enough usable periods: need {needed}, found {found}")]
    NotEnoughPeriods { needed: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.into(),
        }
    }
}
