use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An exhaustive enumeration would visit more points than allowed.
    #[error("enumeration of {cost} points exceeds budget of {budget}")]
    BudgetExceeded { cost: u128, budget: u128 },

    #[error("missing grid cells (m, k): {0:?}")]
    MissingCells(Vec<(u64, u64)>),

    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
