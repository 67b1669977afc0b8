use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::forward::{standard_normal, training_loss_with};
use super::schedule::NoiseSchedule;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::{init_params, ArchSpec, DenoiserParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Adam,
    AdamW { weight_decay: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Linear warmup over the given fraction of steps, then cosine decay to 0.
    WarmupCosine { warmup_frac: f64 },
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::WarmupCosine { warmup_frac } => {
                let warm = ((warmup_frac * total as f64).round() as usize).max(1);
                if step < warm {
                    base * (step + 1) as f64 / warm as f64
                } else {
                    let span = total.saturating_sub(warm).max(1) as f64;
                    let p = ((step - warm) as f64 / span).min(1.0);
                    0.5 * base * (1.0 + (PI * p).cos())
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub lr_schedule: LrSchedule,
    /// Samples per gradient shard; shards are reduced in a fixed order.
    pub shard: usize,
    /// Decay of the exponential moving average of the weights; the average
    /// (bias-corrected) is what training returns.
    pub ema_decay: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 128,
            lr: 1e-4,
            seed: 0,
            optimizer: Optimizer::Adam,
            lr_schedule: LrSchedule::Constant,
            shard: 32,
            ema_decay: None,
        }
    }
}

impl TrainOptions {
    /// AdamW with 5% warmup then cosine decay.
    pub fn images(epochs: usize, batch: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch,
            lr,
            seed,
            optimizer: Optimizer::AdamW { weight_decay: 1e-4 },
            lr_schedule: LrSchedule::WarmupCosine { warmup_frac: 0.05 },
            shard: 8,
            ema_decay: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: DenoiserParams,
    /// Mean minibatch loss per epoch.
    pub epoch_loss: Vec<f64>,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    k: i32,
}

impl AdamState {
    fn new(p: &DenoiserParams) -> Self {
        let z: Vec<Vec<f64>> = p.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: z.clone(),
            v: z,
            k: 0,
        }
    }

    fn step(&mut self, p: &mut DenoiserParams, grads: &[Vec<f64>], lr: f64, opt: Optimizer) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.k += 1;
        let c1 = 1.0 - B1.powi(self.k);
        let c2 = 1.0 - B2.powi(self.k);
        let wd = match opt {
            Optimizer::Adam => 0.0,
            Optimizer::AdamW { weight_decay } => weight_decay,
        };
        for (((t, g), m), v) in p
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in t.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= lr * (mh / (vh.sqrt() + EPS) + wd * *w);
            }
        }
    }
}

/// Loss and parameter gradient of one minibatch, sharded over threads.
fn batch_gradient(
    params: &DenoiserParams,
    s: &NoiseSchedule,
    x0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    shard: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = ts.len();
    let per = x0.len() / n;
    let sample_shape = &x0.shape()[1..];
    let ranges: Vec<(usize, usize)> = (0..n)
        .step_by(shard.max(1))
        .map(|a| (a, (a + shard.max(1)).min(n)))
        .collect();
    let parts: Vec<Result<(f64, Vec<Vec<f64>>)>> = ranges
        .par_iter()
        .map(|&(a, b)| {
            let mut shape = vec![b - a];
            shape.extend_from_slice(sample_shape);
            let xs = Tensor::from_vec(&shape, x0.data()[a * per..b * per].to_vec());
            let es = Tensor::from_vec(&shape, eps.data()[a * per..b * per].to_vec());
            let tape = Tape::new();
            let bound = params.bind(&tape, true);
            let l = training_loss_with(&tape, &bound, &params.arch, s, &xs, &ts[a..b], &es)?;
            let l = tape.scale(l, (b - a) as f64 / n as f64)?;
            let g = tape.backward(l)?;
            let grads = bound
                .vars()
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| g.wrt(v, t.shape()).into_data())
                .collect();
            Ok((tape.item(l), grads))
        })
        .collect();
    let mut loss = 0.0;
    let mut total: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (acc, gi) in total.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    Ok((loss, total))
}

/// Trains a fresh network on `data` (`[N, ...sample_shape]`, scaled to [−1, 1]).
pub fn train(
    data: &Tensor,
    arch: &ArchSpec,
    s: &NoiseSchedule,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let params = init_params(arch, opts.seed)?;
    train_from(params, data, s, opts)
}

pub fn train_from(
    mut params: DenoiserParams,
    data: &Tensor,
    s: &NoiseSchedule,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let sample_shape = params.arch.sample_shape();
    if data.ndim() != sample_shape.len() + 1 || data.shape()[1..] != sample_shape[..] {
        return Err(Error::Shape {
            op: "train".into(),
            expected: sample_shape,
            got: data.shape().get(1..).unwrap_or(&[]).to_vec(),
        });
    }
    let n = data.shape()[0];
    if n == 0 || opts.batch == 0 {
        return Err(Error::contract("empty dataset or zero batch size"));
    }
    let per = data.len() / n;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_7a11);
    let mut adam = AdamState::new(&params);
    let steps_per_epoch = n.div_ceil(opts.batch);
    let total_steps = steps_per_epoch * opts.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(opts.epochs);
    if let Some(d) = opts.ema_decay {
        if !(0.0..1.0).contains(&d) {
            return Err(Error::contract(format!("EMA decay {d} outside [0, 1)")));
        }
    }
    let mut ema: Option<Vec<Vec<f64>>> = opts
        .ema_decay
        .map(|_| params.tensors().iter().map(|t| vec![0.0; t.len()]).collect());
    let mut step = 0;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        for (bi, idx) in order.chunks(opts.batch).enumerate() {
            let mut shape = vec![idx.len()];
            shape.extend_from_slice(&sample_shape);
            let mut xb = Vec::with_capacity(idx.len() * per);
            for &i in idx {
                xb.extend_from_slice(&data.data()[i * per..(i + 1) * per]);
            }
            let x0 = Tensor::from_vec(&shape, xb);
            let ts: Vec<usize> = (0..idx.len()).map(|_| rng.gen_range(1..=s.steps())).collect();
            let eps = standard_normal(&mut rng, &shape);
            let (loss, grads) = batch_gradient(&params, s, &x0, &ts, &eps, opts.shard)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}, batch {bi} (lr {})",
                    opts.lr_schedule.rate(opts.lr, step, total_steps)
                )));
            }
            let lr = opts.lr_schedule.rate(opts.lr, step, total_steps);
            adam.step(&mut params, &grads, lr, opts.optimizer);
            if let (Some(avg), Some(d)) = (ema.as_mut(), opts.ema_decay) {
                for (a, t) in avg.iter_mut().zip(params.tensors()) {
                    a.iter_mut().zip(t.data()).for_each(|(a, w)| *a = d * *a + (1.0 - d) * w);
                }
            }
            acc += loss;
            step += 1;
        }
        let mean = acc / steps_per_epoch as f64;
        log::info!("epoch {epoch}: loss {mean:.6}");
        epoch_loss.push(mean);
    }
    if let (Some(avg), Some(d)) = (ema, opts.ema_decay) {
        let c = 1.0 - d.powi(step as i32);
        if c > 0.0 {
            for (t, a) in params.tensors_mut().iter_mut().zip(avg) {
                t.data_mut().iter_mut().zip(a).for_each(|(w, a)| *w = a / c);
            }
        }
    }
    Ok(TrainReport { params, epoch_loss })
}
