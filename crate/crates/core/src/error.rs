use std::path::PathBuf;

use thiserror::Error;

/// Witness pair used when an RC condition fails.
pub type IndexPair = (usize, usize);

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("unknown loss `{name}`; valid losses: {valid}")]
    UnknownLoss { name: String, valid: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("batch too small: {got} samples, need at least {need}")]
    BatchTooSmall { got: usize, need: usize },

    #[error("RC precondition violated ({condition}) at pair {pair:?}")]
    RcViolation {
        condition: &'static str,
        pair: IndexPair,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("AUC undefined: split contains a single class")]
    SingleClass,

    #[error("statistics input error: {0}")]
    Stats(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
