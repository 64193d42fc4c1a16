use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm is below 1e-12")]
    ZeroVector,

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{path}:{line}: parse error in field `{field}`: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        msg: String,
    },

    #[error("{path}:{line}: schema violation: {msg}")]
    Schema {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("T must be at least 1 (got {0})")]
    BadT(usize),

    #[error("query word list is empty")]
    EmptyQuery,

    #[error("cannot align {frames} frames onto {slots} transcript slots")]
    InfeasibleAlignment { frames: usize, slots: usize },

    #[error("Sinkhorn stopped after {iterations} iterations with marginal violation {violation:e}")]
    NotConverged {
        iterations: usize,
        violation: f64,
        /// Last plan, usable as an approximation.
        plan: crate::numcore::Matrix,
    },

    #[error("no samples to evaluate")]
    NoSamples,

    #[error("no points to build a box from")]
    NoPoints,

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
