use crate::error::{Error, Result};

pub type Matrix3 = [[f64; 3]; 3];

/// Target effective tensors for the MNIST-based cells.
pub const C_BICLINIC: Matrix3 = [[50.0, 12.0, 0.0], [12.0, 60.0, -3.0], [0.0, -3.0, 15.0]];
pub const C_ORTHOTROPIC: Matrix3 = [[50.0, 12.0, 0.0], [12.0, 60.0, 0.0], [0.0, 0.0, 15.0]];
pub const C_TETRAGONAL: Matrix3 = [[60.0, 12.0, 0.0], [12.0, 60.0, 0.0], [0.0, 0.0, 15.0]];
/// Targets for the metamaterial-based cells.
pub const C_META_ORTHOTROPIC: Matrix3 = [[50.0, 15.0, 0.0], [15.0, 70.0, 0.0], [0.0, 0.0, 15.0]];
pub const C_META_TETRAGONAL: Matrix3 = [[50.0, 15.0, 0.0], [15.0, 50.0, 0.0], [0.0, 0.0, 15.0]];

/// Looks up a named target tensor.
pub fn named_target(name: &str) -> Result<Matrix3> {
    Ok(match name {
        "biclinic" => C_BICLINIC,
        "orthotropic" => C_ORTHOTROPIC,
        "tetragonal" => C_TETRAGONAL,
        "meta-orthotropic" => C_META_ORTHOTROPIC,
        "meta-tetragonal" => C_META_TETRAGONAL,
        _ => return Err(Error::contract(format!("unknown target tensor `{name}`"))),
    })
}

/// `Σ_ij (C_ij − C*_ij)²` over all nine entries, so symmetric off-diagonal
/// pairs count twice.
pub fn loss_homogenization(c: &Matrix3, target: &Matrix3) -> f64 {
    let mut l = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            l += (c[i][j] - target[i][j]).powi(2);
        }
    }
    l
}

/// Strain-energy fit of the all-stiff block.
pub fn energy_curve_stiff(x: f64) -> f64 {
    -19.880 * x * x * x + 51.245 * x * x + 0.472 * x
}

/// Strain-energy fit of the all-soft block.
pub fn energy_curve_soft(x: f64) -> f64 {
    -0.199 * x * x * x + 0.512 * x * x + 0.005 * x
}

/// `P*(x) = (1 − α) P₁(x) + α P₀(x)`.
pub fn energy_target(alpha: f64, x: f64) -> f64 {
    (1.0 - alpha) * energy_curve_stiff(x) + alpha * energy_curve_soft(x)
}

pub fn loss_strain_energy(energies: &[f64], loads: &[f64], alpha: f64) -> Result<f64> {
    if energies.len() != loads.len() || loads.is_empty() {
        return Err(Error::contract("one energy per load level"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::contract(format!("blend factor {alpha} outside [0, 1]")));
    }
    Ok(energies
        .iter()
        .zip(loads)
        .map(|(p, &x)| (p - energy_target(alpha, x)).powi(2))
        .sum::<f64>()
        / loads.len() as f64)
}

/// Elastic then exponentially saturating stress-displacement curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveParams {
    pub e: f64,
    pub eps_y: f64,
    pub sigma_inf: f64,
    pub a: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl CurveParams {
    /// Validates `ΣA = σ_∞ − E ε_y` (to 1e-9), or rescales `A` to satisfy it
    /// when `normalize` is set.
    pub fn new(e: f64, eps_y: f64, sigma_inf: f64, mut a: Vec<f64>, kappa: Vec<f64>, normalize: bool) -> Result<Self> {
        if a.len() != kappa.len() || a.is_empty() {
            return Err(Error::contract("curve needs matching, nonempty A and κ lists"));
        }
        if kappa.iter().any(|k| !(*k > 0.0)) || !(e > 0.0) || !(eps_y > 0.0) {
            return Err(Error::contract("curve parameters E, ε_y and κ must be positive"));
        }
        let want = sigma_inf - e * eps_y;
        let sum: f64 = a.iter().sum();
        if (sum - want).abs() > 1e-9 * want.abs().max(1.0) {
            if !normalize || sum == 0.0 {
                return Err(Error::contract(format!(
                    "amplitudes sum to {sum}, expected σ_∞ − E ε_y = {want}"
                )));
            }
            a.iter_mut().for_each(|v| *v *= want / sum);
        }
        Ok(Self {
            e,
            eps_y,
            sigma_inf,
            a,
            kappa,
        })
    }

    /// Groups 1–3 of the simultaneous elasto-plastic design targets.
    pub fn reference_group(group: usize) -> Result<Self> {
        match group {
            1 => Self::new(4.8e4, 2.7e-3, 220.0, vec![4.0, 1.0, 85.4], vec![1000.0, 88.0, 88.0], false),
            2 => Self::new(6.8e4, 2.8e-3, 250.0, vec![12.0, 1.0, 46.6], vec![1000.0, 87.0, 87.0], false),
            3 => Self::new(8.2e4, 2.8e-3, 280.0, vec![18.0, 1.0, 31.4], vec![1000.0, 63.0, 63.0], false),
            _ => Err(Error::contract(format!("no target group {group}"))),
        }
    }

    pub fn sigma0(&self) -> f64 {
        self.e * self.eps_y
    }

    pub fn eval(&self, x: f64) -> f64 {
        target_piecewise_curve(self, x)
    }
}

pub fn target_piecewise_curve(p: &CurveParams, x: f64) -> f64 {
    if x <= p.eps_y {
        p.e * x
    } else {
        p.sigma0()
            + p.a
                .iter()
                .zip(&p.kappa)
                .map(|(a, k)| a * (1.0 - (-k * (x - p.eps_y)).exp()))
                .sum::<f64>()
    }
}

/// `(1/N) Σ (σ̄_i − σ̄*_i)²`.
pub fn loss_stress_curve(sbar: &[f64], target: &[f64]) -> Result<f64> {
    if sbar.len() != target.len() || sbar.is_empty() {
        return Err(Error::contract(format!(
            "stress curve has {} points, target has {}",
            sbar.len(),
            target.len()
        )));
    }
    Ok(sbar.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / sbar.len() as f64)
}
