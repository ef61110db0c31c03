use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("size error: {0}")]
    Size(String),

    #[error("shape mismatch: expected {expected} columns, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error(
        "degenerate feature: column {column} (`{name}`) has zero variance in the training data"
    )]
    DegenerateFeature { column: usize, name: String },

    #[error("parse error ({kind}) at row {row}, column `{column}`: {message}")]
    Parse {
        kind: ParseErrorKind,
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("line search failed at iteration {iteration} (loss {loss:.6e}, max |grad| {grad_max:.3e}): {reason}")]
    LineSearch {
        iteration: usize,
        loss: f64,
        grad_max: f64,
        reason: String,
    },

    #[error("training diverged at epoch {epoch}{}", run_suffix(*.run))]
    Diverged { epoch: usize, run: Option<usize> },

    #[error("insufficient runs: {available} available, at least 2 required")]
    InsufficientRuns { available: usize },

    #[error("join error: {0}")]
    Join(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Distinguishes the ways a tabular input can be rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    EmptyFile,
    MissingColumn,
    NonBinaryLabel,
    NonNumeric,
    DuplicateId,
    Malformed,
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParseErrorKind::EmptyFile => "empty file",
            ParseErrorKind::MissingColumn => "missing column",
            ParseErrorKind::NonBinaryLabel => "non-binary label",
            ParseErrorKind::NonNumeric => "non-numeric value",
            ParseErrorKind::DuplicateId => "duplicate id",
            ParseErrorKind::Malformed => "malformed record",
        };
        f.write_str(s)
    }
}

fn run_suffix(run: Option<usize>) -> String {
    match run {
        Some(r) => format!(" (run {r})"),
        None => String::new(),
    }
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 training failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Unsupported(_) => 1,
            Error::LineSearch { .. } | Error::Diverged { .. } => 3,
            _ => 2,
        }
    }
}
