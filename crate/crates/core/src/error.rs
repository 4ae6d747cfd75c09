use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration blew up at t = {t}: state [x1={x1}, v1={v1}, x2={x2}, v2={v2}]")]
    IntegrationBlowup { t: f64, x1: f64, v1: f64, x2: f64, v2: f64 },

    #[error("estimator diverged at step {step}: {reason}")]
    EstimatorDivergence { step: usize, reason: String },

    #[error("innovation covariance is singular (det = {det:e}, dim = {dim})")]
    SingularInnovation { det: f64, dim: usize },

    #[error("measurement dimension {got} does not match noise model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("static trial did not settle within {seconds} s at weight {weight_kg} kg")]
    SettleTimeout { weight_kg: f64, seconds: f64 },

    #[error("{path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },

    #[error("unknown config key `{key}` at {path}:{line}")]
    UnknownKey { path: String, line: usize, key: String },

    #[error("log parse error: {0}")]
    Log(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
