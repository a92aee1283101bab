//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix shapes do not line up for the requested operation.
    /// Both offending shapes are spelled out (e.g. `2x3` vs `3x2`).
    #[error("dimension mismatch in {op}: left {left}, right {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },

    /// An elementwise operation was fed a value outside its domain.
    #[error("numeric domain violation in {op} at flat index {index}: value {value}")]
    NumericDomain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A node id was referenced that the graph does not know.
    #[error("unknown node id `{id}`")]
    UnknownNode { id: String },

    /// Backward was requested on a tensor whose tape has been cleared or dropped.
    #[error("stale tape: {0}")]
    StaleTape(&'static str),

    /// Backward root is not a scalar, or some other call contract is broken.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input files could not be reconciled into a panel.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// A cell or record failed to parse.
    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    /// The requested split cannot be built.
    #[error("split error: {0}")]
    Split(String),

    /// Node sampling could not satisfy the requested counts.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// A loss or metric has no entries with nonzero weight.
    #[error("undefined {what}: no entries with nonzero weight")]
    Undefined { what: &'static str },

    /// Mutually inconsistent configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A checkpoint does not match the data or graph it is applied to.
    #[error("checkpoint schema mismatch: {0}")]
    Schema(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
