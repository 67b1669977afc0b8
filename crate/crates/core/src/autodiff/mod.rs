//! Reverse-mode automatic differentiation on a recording tape.
//!
//! Every operation appends a node holding its output value and a pullback
//! closure. [`Tape::backward`] walks the nodes in reverse, propagating
//! cotangents without ever forming a Jacobian. Solvers and other opaque
//! computations plug in through [`CustomVjpRule`].

pub mod gradcheck;
pub mod kernels;
mod ops;
mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ProbeMode};
pub use tape::{CustomVjpRule, Gradients, Tape, Var, VjpArgs, VjpFn};
