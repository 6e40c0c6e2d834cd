use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: expected {expected} nodes on [{x_min}, {x_max}], found {found}")]
    GridMismatch {
        expected: usize,
        found: usize,
        x_min: f64,
        x_max: f64,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("time order violated: s = {s} > t = {t}")]
    TimeOrder { s: f64, t: f64 },

    #[error(
        "time mismatch in composition: first ends at {first_end}, second starts at {second_start}"
    )]
    TimeMismatch { first_end: f64, second_start: f64 },

    #[error("CFL violation: dt = {dt} exceeds the stability bound {bound}")]
    Cfl { dt: f64, bound: f64 },

    #[error("non-finite value produced during {context}")]
    NonFinite { context: String },

    #[error("negative propagator entry {value} at ({row}, {col}) beyond clamp threshold")]
    NegativeEntry { value: f64, row: usize, col: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("fixed-point map is not contracting (measured ratio {ratio})")]
    NonContraction { ratio: f64 },

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("model shape: {0}")]
    ModelShape(String),

    #[error("inapplicable: {0}")]
    Inapplicable(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
