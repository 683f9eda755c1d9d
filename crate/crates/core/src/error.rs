use std::path::PathBuf;

use thiserror::Error;

use crate::distractor::FilterStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file. `row` is 1-based and counts the header as row 1.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("invalid return {value} at period {period} (must be > -1)")]
    InvalidReturn { period: usize, value: f64 },

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("degenerate objective: {0}")]
    DegenerateObjective(String),

    #[error("oracle grid too large: about {estimated} points exceeds the limit of {limit}")]
    ResourceLimit { estimated: u128, limit: u128 },

    #[error("solver result failed oracle verification: solver {solver:.12e} vs oracle {oracle:.12e}")]
    VerificationFailed { solver: f64, oracle: f64 },

    #[error("candidate sampling exhausted: accepted {accepted} of {attempts} draws")]
    SamplingExhausted { accepted: usize, attempts: usize },

    #[error("a sampled candidate beat the reported optimum ({candidate:.12e} < {optimum:.12e})")]
    OptimumViolated { candidate: f64, optimum: f64 },

    #[error("distractor generation exhausted: {0}")]
    GenerationExhausted(FilterStats),

    #[error("question assembly failed: {0}")]
    Assembly(String),

    #[error("validation error in field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("generation failed for {} cell(s): {}", .0.len(), .0.join("; "))]
    PartialFailure(Vec<String>),

    #[error("setup error: {0}")]
    Setup(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
