//! Crate-wide error type.
//!
//! Every failure maps onto one of four categories (`config`, `data`,
//! `numeric`, `io`) so the CLI can emit a single machine-parsable line.

use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure category used for CLI exit reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Io => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch at layer {layer}: expected width {expected}, got {got}")]
    Shape {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("layer index {index} out of range (model has {layers} layers)")]
    LayerIndex { index: usize, layers: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("degenerate per-sample weights: {0}")]
    DegenerateWeights(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid dataset: {0}")]
    Data(String),

    #[error("group annotation withheld at level {level}: {field}")]
    Withheld { level: String, field: String },

    #[error("empty error buffer: {0}")]
    EmptyBuffer(String),

    #[error("group weight assigned to empty group {0}")]
    WeightOnEmptyGroup(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::LayerIndex { .. } => ErrorCategory::Config,
            Error::Data(_) | Error::Withheld { .. } | Error::EmptyBuffer(_) => ErrorCategory::Data,
            Error::Shape { .. }
            | Error::EmptyBatch
            | Error::DegenerateWeights(_)
            | Error::Numeric(_)
            | Error::WeightOnEmptyGroup(_) => ErrorCategory::Numeric,
            Error::Io { .. } | Error::Format { .. } => ErrorCategory::Io,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
