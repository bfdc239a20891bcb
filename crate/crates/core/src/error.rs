//! Error type shared by all solver modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid motility parameter: {0}")]
    InvalidMotility(String),

    #[error("motility evaluation at v = {v}: {reason}")]
    MotilityDomain { v: f64, reason: &'static str },

    #[error("sensitivity vanishes at v = {v}; inverse moment undefined")]
    VanishingSensitivity { v: f64 },

    #[error("linear solver stalled after {iters} iterations (relative residual {residual:.3e})")]
    SolverStall { iters: usize, residual: f64 },

    #[error("singular linear system (pivot {pivot:.3e} at row {row})")]
    SingularSystem { row: usize, pivot: f64 },

    #[error("Newton did not converge after {iters} iterations (residual {residual:.3e})")]
    NewtonDiverged { iters: usize, residual: f64 },

    #[error("Newton line search exhausted at iteration {iter}")]
    LineSearchFailed { iter: usize },

    #[error("exponential overflow in steady solve (max unknown {max:.3e})")]
    SteadyOverflow { max: f64 },

    #[error("scaling identity violated: lhs = {lhs:.12e}, rhs = {rhs:.12e}")]
    ScalingIdentity { lhs: f64, rhs: f64 },

    #[error("steady residual verification failed: {residual:.3e} exceeds {tol:.3e}")]
    ResidualVerification { residual: f64, tol: f64 },

    #[error("positivity failure: clipped {deficit:.3e} of mass {mass:.3e} in a single step")]
    PositivityFailure { deficit: f64, mass: f64 },

    #[error("invalid run setting: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
