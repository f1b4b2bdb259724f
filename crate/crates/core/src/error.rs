use thiserror::Error;

/// Failures surfaced by the numerical pipelines and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("newton iteration diverged at x = {x}: residual {residual:e} after {iterations} steps")]
    NewtonDivergence {
        x: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("grid of {grid} nodes cannot resolve degree {degree} without aliasing (need at least {need})")]
    Aliasing {
        grid: usize,
        degree: usize,
        need: usize,
    },

    #[error("pull-back did not converge: iterate difference {difference:e} after {depth} steps")]
    NonConvergence { difference: f64, depth: usize },

    #[error("decay fit is unstable: {0}")]
    FitUnstable(String),

    #[error("degenerate fit input: {0}")]
    DegenerateInput(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
