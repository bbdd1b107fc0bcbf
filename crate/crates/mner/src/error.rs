//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("duplicate parameter name: {0}")]
    DuplicateParameter(String),

    #[error("unknown parameter name: {0}")]
    UnknownParameter(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("non-deterministic loss: two baseline evaluations differ ({a} vs {b})")]
    NonDeterministicLoss { a: f64, b: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown label {label} at line {line}")]
    UnknownLabel { label: String, line: usize },

    #[error("sentence {index}: {message}")]
    BadSentence { index: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("bad magic: expected \"MNER\"")]
    BadMagic,

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated model file")]
    Truncated,

    #[error("model file corrupt: {0}")]
    CorruptModel(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
