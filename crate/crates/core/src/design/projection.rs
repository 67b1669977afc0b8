use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::contract(format!("projection sharpness must be positive, got {gamma}")));
    }
    Ok(())
}

/// `P(x) = ½[tanh(γx) + 1]`, elementwise.
pub fn project(x: &Tensor, gamma: f64) -> Result<Tensor> {
    check_gamma(gamma)?;
    Ok(x.map(|v| 0.5 * ((gamma * v).tanh() + 1.0)))
}

pub fn project_var(tape: &Tape, x: Var, gamma: f64) -> Result<Var> {
    check_gamma(gamma)?;
    let t = tape.tanh(tape.scale(x, gamma)?)?;
    tape.add_scalar(tape.scale(t, 0.5)?, 0.5)
}

/// Whether stiff material sits where the generated image is bright.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Orientation {
    /// `x̃ = P(x₀)`.
    #[default]
    Direct,
    /// `x̃ = 1 − P(x₀)`.
    Inverted,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Orientation::Direct => "direct",
            Orientation::Inverted => "inverted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Orientation::Direct),
            "inverted" => Ok(Orientation::Inverted),
            _ => Err(Error::contract(format!("unknown orientation `{s}` (direct | inverted)"))),
        }
    }

    pub fn apply_var(self, tape: &Tape, p: Var) -> Result<Var> {
        match self {
            Orientation::Direct => Ok(p),
            Orientation::Inverted => tape.add_scalar(tape.neg(p)?, 1.0),
        }
    }
}

/// Endpoints of the linear blend for one property field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialBlend {
    pub theta0: f64,
    pub theta1: f64,
}

impl MaterialBlend {
    pub fn new(theta0: f64, theta1: f64) -> Self {
        Self { theta0, theta1 }
    }

    pub fn at(&self, xt: f64) -> f64 {
        self.theta0 + (self.theta1 - self.theta0) * xt
    }
}

/// `Θ = Θ₀ + (Θ₁ − Θ₀) x̃` for each field, concatenated field-major.
/// `densities[k]` is the density field driving `blends[k]`.
pub fn interpolate_material(densities: &[&[f64]], blends: &[MaterialBlend]) -> Result<Vec<f64>> {
    if densities.len() != blends.len() {
        return Err(Error::contract(format!(
            "{} density fields for {} material blends",
            densities.len(),
            blends.len()
        )));
    }
    let mut out = Vec::new();
    for (d, b) in densities.iter().zip(blends) {
        if let Some((i, v)) = d.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("density {v} at element {i} lies outside [0, 1]")));
        }
        out.extend(d.iter().map(|&x| b.at(x)));
    }
    Ok(out)
}

pub fn interpolate_var(tape: &Tape, densities: &[Var], blends: &[MaterialBlend]) -> Result<Var> {
    if densities.len() != blends.len() || densities.is_empty() {
        return Err(Error::contract("one density field per material blend"));
    }
    let parts = densities
        .iter()
        .zip(blends)
        .map(|(&d, b)| tape.add_scalar(tape.scale(d, b.theta1 - b.theta0)?, b.theta0))
        .collect::<Result<Vec<_>>>()?;
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat(&parts, 0)
    }
}

/// Fraction of entries within `τ` of 0 or 1.
pub fn binarization_metric(xt: &[f64], tau: f64) -> f64 {
    if xt.is_empty() {
        return 1.0;
    }
    let hits = xt.iter().filter(|&&v| v <= tau || v >= 1.0 - tau).count();
    hits as f64 / xt.len() as f64
}
