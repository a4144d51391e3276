use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown tag `{tag}` at {path}:{line}")]
    UnknownTag {
        path: PathBuf,
        line: usize,
        tag: String,
    },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("spans ({a_start},{a_end}) and ({b_start},{b_end}) overlap")]
    OverlappingSpans {
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },

    #[error("span ({start},{end}) out of range for length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("position {position} exceeds the positional table size {max_positions}")]
    PositionOutOfRange {
        position: usize,
        max_positions: usize,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("misaligned corpora: {gold} gold sentences vs {predicted} predicted")]
    Misaligned { gold: usize, predicted: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::UnknownTag { .. } => "unknown_tag",
            Error::UnknownLabel(_) => "unknown_label",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::OverlappingSpans { .. } => "overlapping_spans",
            Error::SpanOutOfRange { .. } => "span_out_of_range",
            Error::PositionOutOfRange { .. } => "position_out_of_range",
            Error::EmptyCorpus => "empty_corpus",
            Error::Misaligned { .. } => "misaligned",
            Error::Divergence(_) => "divergence",
            Error::Checkpoint(_) => "checkpoint",
            Error::File { .. } => "file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
