//! Inverse design of microstructures by optimizing the noise input of a
//! deterministic diffusion sampler.
//!
//! The pipeline is `w → x₀ = G(w) → x̃ = P(x₀) → Θ(x̃) → u(Θ) → L`, where `G`
//! is an η = 0 DDIM sampler over a trained denoiser, `P` a tanh projection,
//! `Θ` a linear material blend and `u` the equilibrium of a finite-element
//! problem. Gradients flow back through the whole chain with reverse-mode
//! differentiation; the solvers contribute adjoint-based pullbacks.

pub mod adjoint;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod design;
pub mod diffusion;
pub mod error;
pub mod export;
pub mod fem;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
