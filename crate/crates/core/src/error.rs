use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the inversion engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("index out of bounds: {0}")]
    Index(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate kriging system: {0}")]
    DegenerateData(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("simulation failed at node {node} with {neighbors} neighbors: {source}")]
    Simulation {
        node: usize,
        neighbors: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluation {id} failed: {source}")]
    Evaluation {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
