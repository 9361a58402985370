//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor or matrix shapes.
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    /// A graph violated a structural invariant (self-loop, duplicate edge,
    /// out-of-range index, overlapping masks, ...).
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// A configuration value was out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An operation was asked to divide by an empty group, an all-equal
    /// vector, an empty node pool, or a similarly degenerate input.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Exhaustive search refused to run on an oversized instance.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// A data file could not be parsed.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Filesystem failure wrapped with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            details: details.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
