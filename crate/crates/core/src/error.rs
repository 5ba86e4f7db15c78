use thiserror::Error;

use crate::solver::LinearSolveReport;

/// Errors raised anywhere in the discretization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),

    #[error("incompressible limit: Poisson ratio {nu} must be below 0.5")]
    IncompressibleLimit { nu: f64 },

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("singular constraints: {0}")]
    SingularConstraints(String),

    #[error("singular matrix: zero pivot at row {row}")]
    SingularMatrix { row: usize },

    #[error("linear solve failed: relative residual {:.3e} above tolerance {:.3e}", report.relative_residual, tolerance)]
    SolverFailure {
        report: LinearSolveReport,
        tolerance: f64,
    },

    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("problem too large for dense diagnostic: {dofs} dofs exceeds budget {budget}")]
    TooLarge { dofs: usize, budget: usize },

    #[error("unsupported report: {0}")]
    UnsupportedReport(String),
}

pub type Result<T> = std::result::Result<T, Error>;
