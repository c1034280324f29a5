use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("cannot fit outcome head: {0}")]
    NoLabeledUnits(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("label model: {0}")]
    LabelModel(String),

    #[error("uninformative coder for class {class}: denominator {denominator:.3e}")]
    UninformativeCoder { class: usize, denominator: f64 },

    #[error("fold {fold}: {inner}")]
    Fold { fold: usize, inner: Box<Error> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            inner: Box::new(self),
        }
    }
}
