use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot swap {needed} edges: only {available} absent pairs")]
    InsufficientAbsentPairs { needed: usize, available: usize },

    #[error("non-finite lower bound at iteration {iteration}")]
    NonFiniteElbo { iteration: usize },

    #[error("equation for node {node} failed: {source}")]
    Equation {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate posterior: zero variance for node {node}, predictor {predictor}")]
    DegeneratePosterior { node: usize, predictor: usize },

    #[error("truth network must contain at least one present and one absent pair")]
    DegenerateTruth,

    #[error("k = {k} exceeds the {available} available node pairs")]
    TooManyEdges { k: usize, available: usize },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
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

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
