//! Relativistic Burgers equation on the exterior of a Schwarzschild black hole.
//!
//! * [`physics`]: metric, flux, shock speed and the steady solution families.
//! * [`autodiff`]: dual numbers and a scalar reverse-mode tape.
//! * [`network`]: smooth network plus shock-aware jump block.
//! * [`residual`]: Godunov fluxes, the flux-divergence residual and the
//!   three-term training loss.
//! * [`fv`]: first-order Godunov finite-volume reference solver.
//! * [`optimizer`]: L-BFGS with a strong Wolfe line search.
//! * [`trainer`]: scenarios, collocation sampling and staged training.

pub mod autodiff;
pub mod error;
pub mod fv;
pub mod network;
pub mod optimizer;
pub mod parallel;
pub mod physics;
pub mod residual;
pub mod trainer;

pub use error::{Error, Result};
