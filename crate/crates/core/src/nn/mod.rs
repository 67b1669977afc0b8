//! Noise-prediction networks ε_θ(x_t, t) built from tape primitives.

mod embedding;
mod mlp;
mod params;
mod unet;

pub use embedding::{embed_steps, sinusoidal_time_embedding};
pub use mlp::mlp_denoiser_apply;
pub use params::{
    init_params, init_params_with, Activation, ArchSpec, BoundParams, DenoiserParams, InitOptions,
    MlpSpec, OutputKind, UnetSpec,
};
pub use unet::{norm_groups, unet_denoiser_apply};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Dispatches on the architecture variant. `x` carries a leading batch axis.
pub fn denoiser_apply(
    tape: &Tape,
    params: &BoundParams,
    arch: &ArchSpec,
    x: Var,
    ts: &[usize],
) -> Result<Var> {
    match arch {
        ArchSpec::Mlp(m) => mlp_denoiser_apply(tape, params, m, x, ts),
        ArchSpec::Unet(u) => unet_denoiser_apply(tape, params, u, x, ts),
    }
}

/// Raw network output, gradient-free, on a scratch tape. Samplers want
/// `diffusion::predict_eps`, which applies the output parametrization.
pub fn network_output(params: &DenoiserParams, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let xv = tape.constant(x.clone());
    let y = denoiser_apply(&tape, &bound, &params.arch, xv, ts)?;
    Ok((*tape.value(y)).clone())
}
