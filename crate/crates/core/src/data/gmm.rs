use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};

/// One-dimensional Gaussian mixture `Σ πᵢ N(μᵢ, σᵢ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmSpec {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        let spec = Self {
            weights,
            means,
            stds,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Two equal modes at ±2.5 with standard deviation 0.5.
    pub fn two_mode() -> Self {
        Self {
            weights: vec![0.5, 0.5],
            means: vec![-2.5, 2.5],
            stds: vec![0.5, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.stds.len() != k {
            return Err(Error::contract("mixture component arrays must be nonempty and equally long"));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::contract("mixture weights must be nonnegative and sum to 1"));
        }
        if self.stds.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::contract("mixture standard deviations must be positive"));
        }
        Ok(())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((w, m), s)| {
                let z = (x - m) / s;
                w * (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt())
            })
            .sum()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = WeightedIndex::new(&self.weights).expect("validated weights");
        let comps: Vec<Normal<f64>> = self
            .means
            .iter()
            .zip(&self.stds)
            .map(|(&m, &s)| Normal::new(m, s).expect("validated std"))
            .collect();
        (0..n).map(|_| comps[pick.sample(&mut rng)].sample(&mut rng)).collect()
    }

    /// Index of the component whose mean is closest to `x`.
    pub fn nearest_mode(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, m) in self.means.iter().enumerate() {
            if (x - m).abs() < (x - self.means[best]).abs() {
                best = i;
            }
        }
        best
    }
}
