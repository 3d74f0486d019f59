use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing required key `{0}`")]
    MissingKey(&'static str),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("variance {value} is below the quantum limit 1/2")]
    Domain { value: f64 },

    #[error("step size error: {0}")]
    StepSize(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("sampling rate error: {0}")]
    SamplingRate(String),

    #[error("unstable filter: {0}")]
    Unstable(String),

    #[error("aliasing: {0}")]
    Aliasing(String),

    #[error("record length error: {0}")]
    Length(String),

    #[error("record was generated with parameters {record:#018x}, filter configured for {filter:#018x}")]
    ParameterMismatch { record: u64, filter: u64 },

    #[error("t = {t} s is outside the trajectory span [0, {end}] s")]
    Range { t: f64, end: f64 },

    #[error("ensemble of {got} realizations is too small (need at least {need})")]
    InsufficientEnsemble { got: usize, need: usize },

    #[error("quadrature did not converge: {0}")]
    Resolution(String),

    #[error("bad record file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
