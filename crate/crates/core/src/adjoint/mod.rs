//! Implicit-function pullbacks through converged nonlinear solves, and their
//! registration as tape primitives.

mod mechanics;
mod solver;

pub use mechanics::*;
pub use solver::*;
