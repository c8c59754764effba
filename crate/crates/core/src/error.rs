use thiserror::Error;

use crate::sim::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// `x1 + k3` vanished in the immune stimulation term.
    #[error("singular immune stimulation term at x1 = {x1}")]
    Singularity { x1: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    /// A state component left the overflow guard. The partial trajectory
    /// up to the last accepted step is attached.
    #[error("solution diverged at t = {t}")]
    Diverged { t: f64, partial: Box<Trajectory> },

    #[error("missing dimensional parameter block")]
    MissingDimensional,

    #[error("multipoint iteration did not contract after {iterations} iterations (observed ratio {ratio:.3e})")]
    NonContraction { iterations: usize, ratio: f64 },

    #[error("multipoint solution violates nonnegativity in component {component} (value {value:e})")]
    Infeasible { component: usize, value: f64 },

    #[error("singular Newton matrix")]
    SingularNewton,

    #[error("Newton iteration made no progress after {iterations} iterations (residual {residual:e})")]
    NoProgress { iterations: usize, residual: f64 },

    #[error("Lyapunov equation has no unique solution (eigenvalues {0} and {1} sum to zero)")]
    NoUniqueSolution(String, String),

    #[error("Lyapunov matrix is not positive definite (lambda_min = {0:e})")]
    NotPositiveDefinite(f64),

    #[error("equilibrium is not locally asymptotically stable (max real part {0:e})")]
    NotStable(f64),

    #[error("no radius with clean V-dot sampling found")]
    EmptyCertificate,

    #[error("only {found} samples fall inside the certified set (need {required})")]
    InsufficientCoverage { found: usize, required: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
