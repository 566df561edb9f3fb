use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid instance: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Buyer wins at some bid but loses at a higher one. Indicates a broken
    /// tie-break, never a property of valid input.
    #[error(
        "non-monotone allocation for buyer {buyer}: wins at {winning_bid}, loses at {losing_bid}"
    )]
    NonMonotone {
        buyer: usize,
        winning_bid: f64,
        losing_bid: f64,
    },

    #[error("size guard exceeded: {what} is {actual}, limit {limit}; {hint}")]
    SizeGuard {
        what: &'static str,
        actual: u128,
        limit: u128,
        hint: &'static str,
    },

    #[error("resample required: {0}")]
    ResampleRequired(String),

    #[error("competitive ratio undefined: optimal matching is empty")]
    UndefinedRatio,
}
