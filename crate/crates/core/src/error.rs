use thiserror::Error;

/// Errors raised by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A mapped column is absent from the CSV header.
    #[error("schema error: column `{column}` not found in header")]
    MissingColumn { column: String },

    #[error("schema error: {0}")]
    Schema(String),

    /// A precondition or cross-argument contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dataset is empty after filtering ({0})")]
    EmptyDataset(String),

    /// The restricted design matrix is not of full column rank.
    #[error("rank-deficient design; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("estimation error: {0}")]
    Estimation(String),

    /// A distribution with no mass, e.g. an all-zero expenditure sample.
    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    /// A calibration spec has a zero slope.
    #[error("singular calibration spec: {0}")]
    Singular(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by front ends to map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Estimation,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Contract(_) | Error::Singular(_) | Error::Generation(_) => ErrorClass::Config,
            Error::MissingColumn { .. }
            | Error::Schema(_)
            | Error::EmptyDataset(_)
            | Error::Degenerate(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::RankDeficient { .. } | Error::Estimation(_) => ErrorClass::Estimation,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
