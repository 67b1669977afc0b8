use crate::error::{Error, Result};

/// Variance schedule with 1-based step indexing and `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::contract("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::contract(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..t_max)
            .map(|i| {
                if t_max == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::contract("every beta must lie in (0, 1)"));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let beta_tilde = (1..=beta.len())
            .map(|t| (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t - 1])
            .collect();
        Ok(Self {
            beta,
            alpha_bar,
            beta_tilde,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::contract(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// `β_t` for `1 ≤ t ≤ T`. Panics out of range.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t - 1]
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Posterior variance `β̃_t = (1−ᾱ_{t−1})/(1−ᾱ_t)·β_t`.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    /// `ᾱ_t` recomputed as `exp(Σ log(1−β_s))`.
    pub fn alpha_bar_logsum(&self, t: usize) -> f64 {
        self.beta[..t].iter().map(|b| (-b).ln_1p()).sum::<f64>().exp()
    }

    pub(crate) fn checked(&self, t: usize) -> Result<usize> {
        self.check(t).map(|_| t)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid default schedule")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let s = NoiseSchedule::default();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-17);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.beta_tilde(1), 0.0);
    }

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bar(1), 0.7);
    }

    #[test]
    fn logsum_matches_running_product() {
        let s = NoiseSchedule::default();
        for t in [1, 10, 500, 1000] {
            let a = s.alpha_bar(t);
            assert!((a - s.alpha_bar_logsum(t)).abs() <= 1e-12, "t={t}");
        }
    }

    #[test]
    fn invalid_range_rejected() {
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn monotone_and_bounded() {
        let s = NoiseSchedule::default();
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.beta_tilde(t) >= 0.0 && s.beta_tilde(t) <= s.beta(t));
        }
    }
}
