use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    AmbiguousLogarithm { angle: f64 },

    #[error("degenerate measurement: innovation covariance condition number {condition:e}")]
    DegenerateMeasurement { condition: f64 },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("curve fit did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergentFit { iterations: usize, residual: f64 },

    #[error("time series misaligned: {0}")]
    Misaligned(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
