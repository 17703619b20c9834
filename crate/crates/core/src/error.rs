use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition of an operation was not met.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid model: {}", format_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("window shorter than order: need n - m > d, got n={n}, m={m}, d={d}")]
    WindowTooShort { n: usize, m: usize, d: usize },

    #[error("unknown symbol {token:?} at token {index} (line {line})")]
    UnknownSymbol {
        token: String,
        index: usize,
        line: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("enumeration budget exceeded: {states} states > budget {budget}")]
    BudgetExceeded { states: usize, budget: usize },

    #[error("no relevant lags or degenerate model: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
