use std::path::PathBuf;

/// Errors raised across the toolkit.
///
/// Variants other than [`Error::Io`] and [`Error::Json`] indicate that the
/// caller handed over data violating a contract; [`Error::is_validation`]
/// tells the two groups apart so the CLI can choose an exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid shape: {0}")]
    InvalidShape(String),
    #[error("malformed header {path}: {msg}")]
    MalformedHeader { path: PathBuf, msg: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient pixels for class {class}: have {available}, need {required}")]
    InsufficientClass {
        class: String,
        available: usize,
        required: usize,
    },
    #[error("empty path")]
    EmptyPath,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Json(_) | Error::Csv(_))
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
