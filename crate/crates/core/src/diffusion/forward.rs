use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{denoiser_apply, ArchSpec, BoundParams, DenoiserParams, OutputKind};
use crate::tensor::Tensor;

/// Closed-form marginal `x_t = √ᾱ_t x0 + √(1−ᾱ_t) ε`.
pub fn forward_sample(s: &NoiseSchedule, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    s.checked(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::Shape {
            op: "forward_sample".into(),
            expected: x0.shape().to_vec(),
            got: eps.shape().to_vec(),
        });
    }
    let (a, b) = (s.alpha_bar(t).sqrt(), (1.0 - s.alpha_bar(t)).sqrt());
    Ok(x0.zip_map(eps, |x, e| a * x + b * e))
}

/// One Markov kernel `x_t = √α_t x_{t−1} + √β_t ε`.
pub fn forward_step(s: &NoiseSchedule, x_prev: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    s.checked(t)?;
    let (a, b) = (s.alpha(t).sqrt(), s.beta(t).sqrt());
    Ok(x_prev.zip_map(eps, |x, e| a * x + b * e))
}

pub fn standard_normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// `ε_θ(x_t, t)` on `tape`, applying the architecture's output
/// parametrization. `x` carries a leading batch axis matching `ts`.
pub fn eps_on_tape(tape: &Tape, params: &BoundParams, arch: &ArchSpec, s: &NoiseSchedule, x: Var, ts: &[usize]) -> Result<Var> {
    let out = denoiser_apply(tape, params, arch, x, ts)?;
    match arch.output_kind() {
        OutputKind::Epsilon => Ok(out),
        OutputKind::Velocity => {
            let shape = tape.shape(x);
            let per = shape.iter().skip(1).product::<usize>();
            let mut a = Vec::with_capacity(per * ts.len());
            let mut b = Vec::with_capacity(per * ts.len());
            for &t in ts {
                s.checked(t)?;
                let ab = s.alpha_bar(t);
                a.extend(std::iter::repeat(ab.sqrt()).take(per));
                b.extend(std::iter::repeat((1.0 - ab).sqrt()).take(per));
            }
            let fa = tape.mul(tape.constant(Tensor::from_vec(&shape, a)), out)?;
            let xb = tape.mul(tape.constant(Tensor::from_vec(&shape, b)), x)?;
            tape.add(fa, xb)
        }
    }
}

/// Gradient-free `ε_θ(x_t, t)`.
pub fn predict_eps(params: &DenoiserParams, s: &NoiseSchedule, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let xv = tape.constant(x.clone());
    let y = eps_on_tape(&tape, &bound, &params.arch, s, xv, ts)?;
    Ok((*tape.value(y)).clone())
}

/// Noise-matching objective for fixed steps and noise: mean over the batch of
/// `‖ε − ε_θ(x_t, t)‖²`. `x0` and `eps` carry a leading batch axis.
pub fn training_loss_with(
    tape: &Tape,
    params: &BoundParams,
    arch: &ArchSpec,
    s: &NoiseSchedule,
    x0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
) -> Result<Var> {
    let n = x0.shape().first().copied().unwrap_or(0);
    if n == 0 || ts.len() != n || x0.shape() != eps.shape() {
        return Err(Error::contract(format!(
            "training batch: x0 {:?}, eps {:?}, {} steps",
            x0.shape(),
            eps.shape(),
            ts.len()
        )));
    }
    let per = x0.len() / n;
    let mut xt = Vec::with_capacity(x0.len());
    for (i, &t) in ts.iter().enumerate() {
        s.checked(t)?;
        let (a, b) = (s.alpha_bar(t).sqrt(), (1.0 - s.alpha_bar(t)).sqrt());
        let r = i * per..(i + 1) * per;
        xt.extend(x0.data()[r.clone()].iter().zip(&eps.data()[r]).map(|(x, e)| a * x + b * e));
    }
    let xt = tape.constant(Tensor::from_vec(x0.shape(), xt));
    let pred = eps_on_tape(tape, params, arch, s, xt, ts)?;
    let target = tape.constant(eps.clone());
    let d = tape.sub(pred, target)?;
    let d2 = tape.square(d)?;
    let total = tape.sum(d2)?;
    tape.scale(total, 1.0 / n as f64)
}

/// [`training_loss_with`] with `t ~ U{1..T}` and `ε ~ N(0, I)` drawn from `rng`.
pub fn training_loss(
    tape: &Tape,
    params: &BoundParams,
    arch: &ArchSpec,
    s: &NoiseSchedule,
    x0: &Tensor,
    rng: &mut impl Rng,
) -> Result<Var> {
    let n = x0.shape().first().copied().unwrap_or(0);
    let ts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=s.steps())).collect();
    let eps = standard_normal(rng, x0.shape());
    training_loss_with(tape, params, arch, s, x0, &ts, &eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_scales_signal() {
        let s = NoiseSchedule::default();
        let x0 = Tensor::vector(vec![1.0, -2.0]);
        let xt = forward_sample(&s, &x0, 300, &Tensor::zeros(&[2])).unwrap();
        let a = s.alpha_bar(300).sqrt();
        assert_eq!(xt.data(), &[a, -2.0 * a]);
    }

    #[test]
    fn zero_signal_scales_noise() {
        let s = NoiseSchedule::default();
        let e = Tensor::vector(vec![0.5]);
        let xt = forward_sample(&s, &Tensor::zeros(&[1]), 10, &e).unwrap();
        assert_eq!(xt.item(), 0.5 * (1.0 - s.alpha_bar(10)).sqrt());
    }

    #[test]
    fn out_of_range_step() {
        let s = NoiseSchedule::default();
        let z = Tensor::zeros(&[1]);
        assert!(forward_sample(&s, &z, 0, &z).is_err());
        assert!(forward_sample(&s, &z, 1001, &z).is_err());
    }
}
