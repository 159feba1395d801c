use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("linear solve did not converge after {iterations} iterations (residual {residual:e})")]
    LinearSolveNotConverged { iterations: usize, residual: f64 },

    #[error(
        "newton iteration did not converge after {iterations} iterations \
         (residual {residual:e}, J = {j_value})"
    )]
    NewtonNotConverged {
        iterations: usize,
        residual: f64,
        j_value: f64,
    },

    #[error("exponent overflow: e^{exponent} is not representable")]
    ExponentOverflow { exponent: f64 },

    #[error("CFL violation: dt = {dt:e} exceeds limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("velocity box too small: outflow {outflow:e} of total mass {mass:e}")]
    VelocityBoxTooSmall { outflow: f64, mass: f64 },

    #[error("malformed field dump: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
