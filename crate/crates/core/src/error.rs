use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space definition: {0}")]
    InvalidSpace(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("encoded coordinate {index} = {value} lies outside [0, 1]")]
    OutOfUnitBox { index: usize, value: f64 },

    #[error("constraint syntax error at line {line}, column {column}: {message}")]
    ConstraintSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("parameter `{0}` is categorical and cannot appear in a numeric constraint")]
    CategoricalInNumericConstraint(String),

    #[error("divisibility constraint evaluated with zero divisor (`{0}` = 0)")]
    ZeroDivisor(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no feasible candidate found after {draws} rejection draws")]
    NoFeasibleCandidate { draws: usize },

    #[error("design space has no feasible configuration within {draws} draws")]
    InfeasibleSpace { draws: usize },

    #[error("checkpoint database is empty")]
    EmptyDatabase,

    #[error("at least {required} records are required, found {found}")]
    InsufficientRecords { required: usize, found: usize },

    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),

    #[error("external evaluator protocol error: {0}")]
    Protocol(String),

    #[error("external evaluator failed: {0}")]
    Tool(String),

    #[error("metric undefined for an invalid evaluation result")]
    UndefinedMetric,

    #[error("asset hash mismatch for `{path}`: expected {expected}, found {actual}")]
    HashMismatch {
        path: String,
        expected: String,
        actual: String,
    },

    #[error("failed to parse `{path}`: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
