use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer `{layer}`: {detail}")]
    Shape { layer: String, detail: String },

    #[error("unknown layer id `{0}`")]
    UnknownLayer(String),

    #[error("layer `{0}` has no weights")]
    Weightless(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid quantization parameters: {0}")]
    InvalidQuant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("layer `{layer}` has {count} weights, above the exact-trace cap of {cap}")]
    SizeCap { layer: String, count: usize, cap: usize },

    #[error("evaluation of pair ({first}, {second}) failed: {source}")]
    PairEvaluation {
        first: String,
        second: String,
        #[source]
        source: Box<Error>,
    },

    #[error("cost table has no entries for: {}", .0.join("; "))]
    MissingCost(Vec<String>),

    #[error("evaluation budget of {0} exceeded")]
    BudgetExceeded(usize),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data { path: path.into(), message: message.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidQuant(_) | Error::MissingCost(_) => 2,
            Error::BudgetExceeded(_) => 4,
            _ => 3,
        }
    }
}
