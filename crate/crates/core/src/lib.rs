//! Tumor-host-immune dynamics under chemotherapy: simulation, multipoint
//! initial conditions, equilibria, quadratic Lyapunov certificates and
//! basins of attraction.

// `!(a > b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::result_large_err)]

pub mod basin;
pub mod cli;
pub mod error;
pub mod lyapunov;
pub mod model;
pub mod multipoint;
pub mod ode;
pub mod plot;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};
pub use nalgebra::Matrix3;
pub use model::{DrugSchedule, ModelParams, ResponseCurve, SystemState};
pub use ode::Tolerance;
pub use sim::{ConvergenceLabel, ConvergenceVerdict, Trajectory};
pub use stability::{Equilibrium, EquilibriumId};
pub use lyapunov::LyapunovCertificate;
