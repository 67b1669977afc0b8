//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which coordinates of the input get probed.
#[derive(Clone, Copy, Debug)]
pub enum ProbeMode {
    Full,
    Random { count: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Scale the step by `max(|x_i|, 1)` per coordinate.
    pub relative: bool,
    pub mode: ProbeMode,
    /// Denominator floor: `max(|g_fd|, floor_abs, floor_rel·max_i|g_fd,i|)`.
    pub floor_abs: f64,
    pub floor_rel: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            relative: false,
            mode: ProbeMode::Full,
            floor_abs: 1e-12,
            floor_rel: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub probed: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the tape gradient of `f` at `x` to central differences.
///
/// `f` records a scalar-valued computation of its argument on the given tape.
pub fn grad_check<F>(f: F, x: &Tensor, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&tape, xv)?;
    let grads = tape.backward(out)?;
    let g_ad = grads.wrt(xv, x.shape());

    let eval = |probe: &Tensor| -> Result<f64> {
        let t = Tape::new();
        let v = t.constant(probe.clone());
        let o = f(&t, v)?;
        Ok(t.item(o))
    };

    let coords: Vec<usize> = match opts.mode {
        ProbeMode::Full => (0..x.len()).collect(),
        ProbeMode::Random { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = sample(&mut rng, x.len(), count.min(x.len())).into_vec();
            c.sort_unstable();
            c
        }
    };

    let mut numeric = Vec::with_capacity(coords.len());
    for &i in &coords {
        let h = if opts.relative { opts.step * x.data()[i].abs().max(1.0) } else { opts.step };
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let fp = eval(&xp)?;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let fm = eval(&xm)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "f is not finite when probing coordinate {i} (f+ = {fp}, f- = {fm})"
            )));
        }
        numeric.push((fp - fm) / (2.0 * h));
    }

    let scale = numeric.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = opts.floor_abs.max(opts.floor_rel * scale);
    let analytic: Vec<f64> = coords.iter().map(|&i| g_ad.data()[i]).collect();
    let mut max_rel = 0.0;
    let mut worst = coords.first().copied().unwrap_or(0);
    for ((&i, a), n) in coords.iter().zip(&analytic).zip(&numeric) {
        let e = (a - n).abs() / n.abs().max(floor);
        if e > max_rel {
            max_rel = e;
            worst = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_coordinate: worst,
        probed: coords,
        analytic,
        numeric,
    })
}
