use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed model document: {0}")]
    Document(#[from] serde_json::Error),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable mismatch: {0}")]
    VariableMismatch(String),

    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("evidence has zero probability under the model (row {row})")]
    ZeroProbability { row: usize },

    #[error("enumeration guard exceeded: {states} states > {limit}")]
    GuardExceeded { states: u128, limit: u128 },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
