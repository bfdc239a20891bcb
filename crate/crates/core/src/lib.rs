//! Finite-volume laboratory for a chemotaxis model with signal-dependent
//! motility: a cell density `u` drifts up the gradient of a signal `v` that it
//! secretes itself, while both its diffusivity `gamma(v)` and its chemotactic
//! sensitivity `phi(v)` decay with the signal.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: cell-centered meshes (interval, rectangle, radial disc),
//!   fields, quadrature and zero-flux face calculus;
//! * [`motility`]: motility-function families and analytic admissibility
//!   checks;
//! * [`elliptic`]: the screened Poisson solve for the signal;
//! * [`evolve`]: explicit time marching with positivity and blowup guards;
//! * [`steady`]: Newton solvers and parameter continuation for stationary
//!   profiles.

pub mod elliptic;
pub mod error;
pub mod evolve;
pub mod grid;
mod linalg;
pub mod motility;
pub mod steady;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
