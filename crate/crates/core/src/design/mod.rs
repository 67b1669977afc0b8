//! Noise-input optimization: projection, material blending, losses,
//! quasi-Newton minimization and the γ-continuation driver.

mod bfgs;
mod loss;
mod problem;
mod projection;

pub use bfgs::*;
pub use loss::*;
pub use problem::*;
pub use projection::*;
