use std::io::Write;
use std::path::Path;

use rand::Rng;

use super::forward::standard_normal;
use super::schedule::NoiseSchedule;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use super::forward::{eps_on_tape, predict_eps};
use crate::nn::{BoundParams, DenoiserParams};
use crate::tensor::Tensor;

/// Ancestral update `x_{t−1} = (x_t − (1−α_t)/√(1−ᾱ_t) ε)/√α_t + √β̃_t z`,
/// given the network prediction `eps`. `z` is ignored at `t = 1`.
pub fn ddpm_update(s: &NoiseSchedule, x: &Tensor, t: usize, eps: &Tensor, z: &Tensor) -> Result<Tensor> {
    s.checked(t)?;
    let c = (1.0 - s.alpha(t)) / (1.0 - s.alpha_bar(t)).sqrt();
    let inv = 1.0 / s.alpha(t).sqrt();
    let sigma = if t == 1 { 0.0 } else { s.beta_tilde(t).sqrt() };
    let mean = x.zip_map(eps, |x, e| inv * (x - c * e));
    Ok(mean.zip_map(z, |m, z| m + sigma * z))
}

/// One ancestral step with the network's own prediction.
pub fn ddpm_step(params: &DenoiserParams, s: &NoiseSchedule, x: &Tensor, t: usize, z: &Tensor) -> Result<Tensor> {
    let n = x.shape().first().copied().unwrap_or(1);
    let eps = predict_eps(params, s, x, &vec![t; n])?;
    ddpm_update(s, x, t, &eps, z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spacing {
    Uniform,
    Quadratic,
}

/// Step subsequence `τ_1 < … < τ_S = T` with per-step noise scales.
#[derive(Clone, Debug, PartialEq)]
pub struct DdimPlan {
    taus: Vec<usize>,
    eta: f64,
    sigmas: Vec<f64>,
}

impl DdimPlan {
    pub fn new(s: &NoiseSchedule, steps: usize, eta: f64, spacing: Spacing) -> Result<Self> {
        let t_max = s.steps();
        if steps == 0 || steps > t_max {
            return Err(Error::contract(format!(
                "DDIM step count {steps} outside 1..={t_max}"
            )));
        }
        let taus: Vec<usize> = match spacing {
            Spacing::Uniform => (1..=steps).map(|i| i * t_max / steps).collect(),
            Spacing::Quadratic => {
                let mut v: Vec<usize> = Vec::with_capacity(steps);
                for i in 1..=steps {
                    let f = (i as f64 / steps as f64).powi(2);
                    let mut t = ((f * t_max as f64).round() as usize).max(1);
                    if let Some(&last) = v.last() {
                        t = t.max(last + 1);
                    }
                    v.push(t);
                }
                // Keep the tail strictly increasing and ending exactly at T.
                let last = v.len() - 1;
                v[last] = t_max;
                for i in (0..last).rev() {
                    if v[i] >= v[i + 1] {
                        v[i] = v[i + 1] - 1;
                    }
                }
                v
            }
        };
        Self::from_taus(s, taus, eta)
    }

    pub fn from_taus(s: &NoiseSchedule, taus: Vec<usize>, eta: f64) -> Result<Self> {
        if taus.is_empty()
            || taus[0] == 0
            || *taus.last().unwrap() > s.steps()
            || taus.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::contract(format!(
                "DDIM subsequence must be strictly increasing within 1..={}",
                s.steps()
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::contract(format!("eta {eta} outside [0, 1]")));
        }
        let sigmas = (0..taus.len())
            .map(|i| {
                let a = s.alpha_bar(taus[i]);
                let ap = s.alpha_bar(if i == 0 { 0 } else { taus[i - 1] });
                eta * ((1.0 - ap) / (1.0 - a)).sqrt() * (1.0 - a / ap).sqrt()
            })
            .collect();
        Ok(Self { taus, eta, sigmas })
    }

    pub fn taus(&self) -> &[usize] {
        &self.taus
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Step reached by the update out of `taus[i]` (0 for the last one).
    pub fn prev(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.taus[i - 1]
        }
    }

    /// Coefficients `(a, b, σ)` of `x_prev = a·x + b·ε + σ·z` at plan index `i`.
    pub fn coefficients(&self, s: &NoiseSchedule, i: usize) -> (f64, f64, f64) {
        let at = s.alpha_bar(self.taus[i]);
        let ap = s.alpha_bar(self.prev(i));
        let sig = self.sigmas[i];
        let a = (ap / at).sqrt();
        let b = (1.0 - ap - sig * sig).max(0.0).sqrt() - ap.sqrt() * (1.0 - at).sqrt() / at.sqrt();
        (a, b, sig)
    }
}

/// Single DDIM update at plan index `i` (from `τ_i` to `τ_{i−1}`).
pub fn ddim_update(s: &NoiseSchedule, plan: &DdimPlan, i: usize, x: &Tensor, eps: &Tensor, z: Option<&Tensor>) -> Tensor {
    let (a, b, sig) = plan.coefficients(s, i);
    let mut out = x.zip_map(eps, |x, e| a * x + b * e);
    if let Some(z) = z {
        if sig != 0.0 {
            out = out.zip_map(z, |o, z| o + sig * z);
        }
    }
    out
}

/// States `x_{τ_S}, …, x_{τ_1}, x_0` of one sampling run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub states: Vec<Tensor>,
}

impl Trajectory {
    pub fn final_state(&self) -> &Tensor {
        self.states.last().expect("trajectory holds x_T")
    }

    /// CSV rows `step, v0, v1, …` with the flattened state.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let write = |f: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
            let n = self.states.first().map_or(0, Tensor::len);
            write!(f, "step")?;
            for j in 0..n {
                write!(f, ",x{j}")?;
            }
            writeln!(f)?;
            for (t, x) in self.steps.iter().zip(&self.states) {
                write!(f, "{t}")?;
                for v in x.data() {
                    write!(f, ",{v:?}")?;
                }
                writeln!(f)?;
            }
            f.flush()
        };
        write(&mut f).map_err(|e| Error::io(path, e))
    }
}

/// Runs the plan from `x_T` (leading batch axis). `rng` is required when `η > 0`.
pub fn ddim_sample<R: Rng>(
    params: &DenoiserParams,
    s: &NoiseSchedule,
    plan: &DdimPlan,
    x_t: &Tensor,
    mut rng: Option<&mut R>,
) -> Result<Trajectory> {
    if plan.eta > 0.0 && rng.is_none() {
        return Err(Error::contract("stochastic DDIM plan (eta > 0) requires an rng"));
    }
    let n = x_t.shape().first().copied().unwrap_or(1);
    let mut steps = vec![*plan.taus.last().unwrap()];
    let mut states = vec![x_t.clone()];
    let mut x = x_t.clone();
    for i in (0..plan.len()).rev() {
        let eps = predict_eps(params, s, &x, &vec![plan.taus[i]; n])?;
        let z = match rng.as_deref_mut() {
            Some(r) if plan.sigmas[i] != 0.0 => Some(standard_normal(r, x.shape())),
            _ => None,
        };
        x = ddim_update(s, plan, i, &x, &eps, z.as_ref());
        steps.push(plan.prev(i));
        states.push(x.clone());
    }
    Ok(Trajectory { steps, states })
}

fn require_deterministic(plan: &DdimPlan) -> Result<()> {
    if plan.eta != 0.0 {
        return Err(Error::contract(format!(
            "the generator is only a deterministic map at eta = 0 (got {})",
            plan.eta
        )));
    }
    Ok(())
}

/// Records the η = 0 generator `x_0 = G_θ(w)` on `tape`.
pub fn ddim_generate(
    tape: &Tape,
    params: &BoundParams,
    arch: &crate::nn::ArchSpec,
    s: &NoiseSchedule,
    plan: &DdimPlan,
    w: Var,
) -> Result<Var> {
    require_deterministic(plan)?;
    let n = tape.shape(w).first().copied().unwrap_or(1);
    let mut x = w;
    for i in (0..plan.len()).rev() {
        let eps = eps_on_tape(tape, params, arch, s, x, &vec![plan.taus[i]; n])?;
        let (a, b, _) = plan.coefficients(s, i);
        x = tape.axpby(a, x, b, eps)?;
    }
    Ok(x)
}

/// Deterministic generator output for noise `w`.
pub fn generate(params: &DenoiserParams, s: &NoiseSchedule, plan: &DdimPlan, w: &Tensor) -> Result<Tensor> {
    require_deterministic(plan)?;
    Ok(ddim_sample::<rand_chacha::ChaCha8Rng>(params, s, plan, w, None)?
        .final_state()
        .clone())
}

/// `v_w = (∂x_0/∂w)ᵀ v` through all denoiser applications of the η = 0 plan.
pub fn generator_vjp(
    params: &DenoiserParams,
    s: &NoiseSchedule,
    plan: &DdimPlan,
    w: &Tensor,
    cotangent: &Tensor,
) -> Result<Tensor> {
    require_deterministic(plan)?;
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let wv = tape.leaf(w.clone());
    let x0 = ddim_generate(&tape, &bound, &params.arch, s, plan, wv)?;
    let g = tape.backward_with(x0, cotangent.clone())?;
    Ok(g.wrt(wv, w.shape()))
}
