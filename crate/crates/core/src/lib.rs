//! Stability analysis of the multivariate geometric Brownian motion
//!
//!   dX(t) = A X(t) dt + Σ_j B_j X(t) dW_j(t)
//!
//! The toolkit decides exponential p-stability of the origin by constructing
//! the Lyapunov condition H(x) ≥ c‖x‖⁴ for V(x) = (x*Qx)^{p/2} as a matrix
//! inequality — linear in Q when p = 2, bilinear otherwise — solving it with a
//! small dense interior-point solver plus an alternating heuristic, and
//! independently verifying every certificate against a sum-of-squares Gram
//! check, a sphere-sampling oracle, the Kronecker second-moment ODE and Monte
//! Carlo simulation.

pub mod bmi;
pub mod casebook;
pub mod cli;
pub mod error;
pub mod heuristic;
pub mod model;
pub mod quartic;
pub mod sdp;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
