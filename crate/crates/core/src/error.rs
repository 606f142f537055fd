use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unbalanced design: {cases} cases vs {controls} controls")]
    Unbalanced { cases: usize, controls: usize },

    #[error("column {column} has zero variance")]
    DegenerateData { column: usize },

    #[error("|x[{row}][{column}]| = {value} exceeds declared bound {bound}")]
    BoundExceeded {
        row: usize,
        column: usize,
        value: f64,
        bound: f64,
    },

    #[error("bisection bracket invalid: h(z0) = {h0}, h(z1) = {h1}")]
    BracketInvalid { h0: f64, h1: f64 },

    #[error("cannot split {n} observations per class into {p} folds")]
    FoldCount { p: usize, n: usize },

    #[error("case-control sampler exceeded its draw budget of {budget}")]
    DrawBudgetExceeded { budget: u64 },

    #[error("no dimension survived every cross-validation fold")]
    AllDimensionsSkipped,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
