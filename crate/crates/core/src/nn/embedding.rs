use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sinusoidal encoding of an integer step: interleaved pairs
/// `(sin(t·ωᵢ), cos(t·ωᵢ))` with `ωᵢ = 10000^(−2i/dim)`.
pub fn sinusoidal_time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::contract(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let a = t as f64 * omega;
        out.push(a.sin());
        out.push(a.cos());
    }
    Ok(out)
}

/// Stacks the embeddings of a batch of steps into `[batch, dim]`.
pub fn embed_steps(ts: &[usize], dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        data.extend(sinusoidal_time_embedding(t, dim)?);
    }
    Tensor::new(&[ts.len(), dim], data)
}
