use thiserror::Error;

use crate::solver::SolveReport;

/// Errors raised by the grid operators, the solvers and the verification
/// harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("constraint violated: |det D2 v - k|_inf = {residual:e} exceeds {tolerance:e}")]
    FeasibilityViolated { residual: f64, tolerance: f64 },

    #[error("k is not constant over the grid")]
    NonConstantK,

    #[error("branch {branch} is inconsistent with k = {k}")]
    SignMismatch { branch: &'static str, k: f64 },

    /// Either a coefficient field that fails strict ellipticity at `node`, or
    /// constraint data with `k_min <= 0` (in which case `node` is `None`).
    #[error("operator is not strictly elliptic (value {value:e} at node {node:?})")]
    NotElliptic {
        node: Option<(usize, usize)>,
        value: f64,
    },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("iterative solve diverged after {iterations} iterations (relative residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },

    #[error("iterate lost convexity (minimum Hessian eigenvalue {min_eigenvalue:e} at node {node:?})")]
    LostConvexity {
        node: (usize, usize),
        min_eigenvalue: f64,
    },

    #[error("Newton restoration did not reach tolerance in {iterations} iterations (residual {residual:e})")]
    MaxNewtonIterations { iterations: usize, residual: f64 },

    #[error("normal equations for the multiplier are singular")]
    SingularNormalEquations,

    #[error("minimization stopped after {} outer iterations without converging", .0.outer_iterations)]
    MaxOuterIterations(Box<SolveReport>),

    #[error("line search stalled below the minimum step after {} outer iterations", .0.outer_iterations)]
    LineSearchStalled(Box<SolveReport>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// The partial report carried by non-convergence errors.
    pub fn report(&self) -> Option<&SolveReport> {
        match self {
            Error::MaxOuterIterations(r) | Error::LineSearchStalled(r) => Some(r),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
