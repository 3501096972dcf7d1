use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed `{chunk}` chunk: {reason}")]
    MalformedChunk { chunk: String, reason: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("truncated data: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("input too short: need at least {required}, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("mel filter {filter} is empty at this FFT resolution")]
    EmptyFilter { filter: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("degenerate batch statistics in layer {layer}: a single value per channel")]
    DegenerateStatistics { layer: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("fold plan: {0}")]
    FoldPlan(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("cache: {0}")]
    Cache(String),

    #[error("parse error: {0}")]
    Parse(String),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite(_) | Error::DegenerateStatistics { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    /// Attributes a layer-level failure to its position in the network.
    pub fn at_layer(self, index: usize, kind: &str) -> Self {
        match self {
            Error::Shape {
                context,
                expected,
                actual,
            } => Error::Shape {
                context: format!("layer {index} ({kind}) {context}"),
                expected,
                actual,
            },
            Error::DegenerateStatistics { .. } => Error::DegenerateStatistics { layer: index },
            Error::NonFinite(what) => Error::NonFinite(format!("layer {index} ({kind}) {what}")),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Debug,
        actual: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
