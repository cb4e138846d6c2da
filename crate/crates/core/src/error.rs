use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by ingestion, metrics, manipulations and the harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("text is empty after trimming")]
    EmptyText,

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: span {span:?} out of bounds for {len} tokens ({what})")]
    Span {
        path: PathBuf,
        line: usize,
        span: (usize, usize),
        len: usize,
        what: &'static str,
    },

    #[error("embedding dimension mismatch for id {id}: expected {expected}, found {found}")]
    Dimension {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in embedding for id {id}")]
    Value { id: String },

    #[error("no embedding for sentence id {0}")]
    MissingEmbedding(String),

    #[error("weight matrix must be square, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },

    #[error("degenerate zero vector: {0}")]
    DegenerateVector(&'static str),

    #[error("manipulation {kind} not applicable: {reason}")]
    NotApplicable { kind: String, reason: String },

    #[error("distractor pool is empty")]
    MissingDistractors,

    #[error("{what} annotation required on sentence {id}")]
    AnnotationRequired { id: String, what: &'static str },

    #[error("bag is empty")]
    EmptyBag,

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: IoError,
    },
}

/// `std::io::Error` is not `Clone`; keep the kind and message.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{message}")]
pub struct IoError {
    pub kind: std::io::ErrorKind,
    pub message: String,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source: IoError {
                kind: err.kind(),
                message: err.to_string(),
            },
        }
    }

    /// Short variant name, used to tally failures in reports.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::EmptyText => "EmptyText",
            Error::Format { .. } => "FormatError",
            Error::Span { .. } => "SpanError",
            Error::Dimension { .. } => "DimensionError",
            Error::Value { .. } => "ValueError",
            Error::MissingEmbedding(_) => "MissingEmbedding",
            Error::Shape { .. } => "ShapeError",
            Error::DegenerateVector(_) => "DegenerateVector",
            Error::NotApplicable { .. } => "NotApplicable",
            Error::MissingDistractors => "MissingDistractors",
            Error::AnnotationRequired { .. } => "AnnotationRequired",
            Error::EmptyBag => "EmptyBag",
            Error::Usage(_) => "UsageError",
            Error::Io { .. } => "IoError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
