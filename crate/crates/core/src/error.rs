//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// One rejected line of a JSONL dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error on line {}: {} ({} rejected line(s) in total)", .0[0].line, .0[0].reason, .0.len())]
    Validation(Vec<Reject>),

    #[error("invalid instance: {0}")]
    Instance(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("degenerate probe: {0}")]
    DegenerateProbe(String),

    #[error("intervention error: {0}")]
    Intervention(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (flags, configs, data files)
    /// as opposed to failures inside the toolkit.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Diverged { .. } | Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
