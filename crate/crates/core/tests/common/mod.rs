#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst relative error of `grad` against central differences of `f` at the
/// given coordinates. The step is relative to each coordinate's magnitude and
/// the denominator is floored at `floor_rel` times the largest probed gradient.
pub fn fd_max_rel_error(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], coords: &[usize], rel_step: f64, floor_rel: f64) -> f64 {
    let gmax = coords.iter().fold(0.0f64, |m, &i| m.max(grad[i].abs()));
    coords
        .iter()
        .map(|&i| {
            let h = rel_step * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            (fd - grad[i]).abs() / fd.abs().max(floor_rel * gmax).max(1e-300)
        })
        .fold(0.0, f64::max)
}

pub fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn pick(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, count.min(n)).into_vec()
}
