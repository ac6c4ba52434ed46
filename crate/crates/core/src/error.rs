use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("unknown column in manifest: {0}")]
    UnknownColumn(String),

    #[error("level out of range: value {value} in column {column} at record {record} (allowed 1..={max})")]
    LevelOutOfRange {
        column: String,
        record: usize,
        value: i64,
        max: usize,
    },

    #[error("non-numeric value {value:?} in column {column} at record {record}")]
    NonNumeric {
        column: String,
        record: usize,
        value: String,
    },

    #[error("value {value:?} is not a declared category of column {column} (record {record})")]
    UnknownCategory {
        column: String,
        record: usize,
        value: String,
    },

    #[error("invalid level grouping: {0}")]
    InvalidGrouping(String),

    #[error("level {0} is outside the grouping domain")]
    OutsideGrouping(usize),

    #[error("missing level value at observation {0}")]
    MissingLevel(usize),

    #[error("missing value in feature {column} at observation {observation}")]
    MissingFeature { column: String, observation: usize },

    #[error("off-diagonal count is zero")]
    NoOffDiagonal,

    #[error("invalid probability vector at observation {observation:?}: completed final entry is {last}")]
    InvalidProbability {
        observation: Option<usize>,
        last: f64,
    },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("fit has not converged; refit with a larger iteration cap or looser tolerance")]
    NotConverged,

    #[error("too many bootstrap replicates dropped: {dropped} of {total}")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("no observed values in column {0}")]
    NoObservedValues(String),

    #[error("fold {fold} training split has no observation with initial level {level}; use fewer folds")]
    FoldMissingLevel { fold: usize, level: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
