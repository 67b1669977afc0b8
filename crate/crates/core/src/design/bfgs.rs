use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub loss_tol: f64,
    pub grad_tol: f64,
    /// `Some(m)` switches to limited-memory updates with `m` pairs.
    pub memory: Option<usize>,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            loss_tol: 0.0,
            grad_tol: 1e-10,
            memory: None,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    LossTolerance,
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::LossTolerance => "loss_tolerance",
            StopReason::GradientTolerance => "gradient_tolerance",
            StopReason::MaxIterations => "max_iterations",
            StopReason::LineSearchFailed => "line_search_failed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsTrace {
    /// Loss at the start and after every accepted step.
    pub losses: Vec<f64>,
    /// `‖g‖∞` alongside `losses`.
    pub grad_norms: Vec<f64>,
    pub evaluations: usize,
    pub stop: StopReason,
    pub line_search_failed: bool,
}

impl BfgsTrace {
    pub fn iterations(&self) -> usize {
        self.losses.len() - 1
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace holds the initial loss")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Inverse-Hessian approximation, dense or limited-memory.
enum InverseHessian {
    Dense { h: Vec<f64>, n: usize, scaled: bool },
    Limited { m: usize, pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> },
}

impl InverseHessian {
    fn new(n: usize, memory: Option<usize>) -> Self {
        match memory {
            Some(m) => InverseHessian::Limited {
                m: m.max(1),
                pairs: VecDeque::new(),
            },
            None => {
                let mut h = vec![0.0; n * n];
                (0..n).for_each(|i| h[i * n + i] = 1.0);
                InverseHessian::Dense { h, n, scaled: false }
            }
        }
    }

    fn is_fresh(&self) -> bool {
        match self {
            InverseHessian::Dense { scaled, .. } => !scaled,
            InverseHessian::Limited { pairs, .. } => pairs.is_empty(),
        }
    }

    fn reset(&mut self) {
        match self {
            InverseHessian::Dense { h, n, scaled } => {
                h.iter_mut().for_each(|v| *v = 0.0);
                (0..*n).for_each(|i| h[i * *n + i] = 1.0);
                *scaled = false;
            }
            InverseHessian::Limited { pairs, .. } => pairs.clear(),
        }
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        match self {
            InverseHessian::Dense { h, n, .. } => (0..*n).map(|i| -dot(&h[i * n..(i + 1) * n], g)).collect(),
            InverseHessian::Limited { pairs, .. } => {
                let mut q = g.to_vec();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = rho * dot(s, &q);
                    q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                    alphas.push(a);
                }
                if let Some((s, y, _)) = pairs.back() {
                    let gamma = dot(s, y) / dot(y, y);
                    q.iter_mut().for_each(|v| *v *= gamma);
                }
                for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
                    let b = rho * dot(y, &q);
                    q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
                }
                q.iter_mut().for_each(|v| *v = -*v);
                q
            }
        }
    }

    fn update(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt()) {
            return;
        }
        let rho = 1.0 / sy;
        match self {
            InverseHessian::Dense { h, n, scaled } => {
                let n = *n;
                if !*scaled {
                    let gamma = sy / dot(&y, &y);
                    h.iter_mut().for_each(|v| *v *= gamma);
                    *scaled = true;
                }
                // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
                let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
                let yhy = dot(&y, &hy);
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                    }
                }
            }
            InverseHessian::Limited { m, pairs } => {
                if pairs.len() == *m {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, rho));
            }
        }
    }
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

/// Line-search evaluation; solver failures and non-finite values count as an
/// infinitely bad point so the search backs off instead of aborting.
fn probe<F>(f: &mut F, w: &[f64], d: &[f64], alpha: f64, evals: &mut usize) -> Option<Point>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    *evals += 1;
    let x: Vec<f64> = w.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    match f(&x) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {
            let dphi = dot(&g, d);
            Some(Point { alpha, f: v, g, dphi })
        }
        Ok(_) => None,
        Err(e) => {
            log::debug!("line-search probe at step {alpha:e} failed: {e}");
            None
        }
    }
}

/// Strong-Wolfe search along `d`. Returns the accepted point, or the best
/// sufficient-decrease point found when the curvature condition cannot be met.
fn strong_wolfe<F>(f: &mut F, w: &[f64], f0: f64, dphi0: f64, d: &[f64], alpha0: f64, opts: &BfgsOptions, evals: &mut usize) -> Option<Point>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let armijo = |p: &Point| p.f <= f0 + opts.c1 * p.alpha * dphi0;
    let curvature = |p: &Point| p.dphi.abs() <= -opts.c2 * dphi0;
    let mut lo = Point {
        alpha: 0.0,
        f: f0,
        g: vec![],
        dphi: dphi0,
    };
    let mut alpha = alpha0;
    let mut budget = opts.max_line_search;
    // bracketing phase
    let mut hi_alpha;
    let mut hi_f = f64::INFINITY;
    loop {
        if budget == 0 {
            return (lo.alpha > 0.0).then_some(lo);
        }
        budget -= 1;
        match probe(f, w, d, alpha, evals) {
            None => {
                hi_alpha = alpha;
                break;
            }
            Some(p) => {
                if !armijo(&p) || (lo.alpha > 0.0 && p.f >= lo.f) {
                    hi_alpha = p.alpha;
                    hi_f = p.f;
                    break;
                }
                if curvature(&p) {
                    return Some(p);
                }
                if p.dphi >= 0.0 {
                    hi_alpha = lo.alpha;
                    hi_f = lo.f;
                    lo = p;
                    break;
                }
                lo = p;
                alpha *= 2.0;
            }
        }
    }
    // zoom phase
    while budget > 0 {
        budget -= 1;
        let (a, b) = (lo.alpha, hi_alpha);
        let width = b - a;
        if width.abs() <= 1e-16 * a.abs().max(b.abs()).max(1e-300) {
            break;
        }
        // quadratic through (lo.f, lo.dphi) and hi_f, kept away from the ends
        let mut trial = if hi_f.is_finite() {
            let denom = 2.0 * (hi_f - lo.f - lo.dphi * width);
            if denom > 0.0 {
                a - lo.dphi * width * width / denom
            } else {
                a + 0.5 * width
            }
        } else {
            a + 0.5 * width
        };
        let (l, h) = if a < b { (a, b) } else { (b, a) };
        trial = trial.clamp(l + 0.1 * (h - l), h - 0.1 * (h - l));
        match probe(f, w, d, trial, evals) {
            None => {
                hi_alpha = trial;
                hi_f = f64::INFINITY;
            }
            Some(p) => {
                if !armijo(&p) || p.f >= lo.f {
                    hi_alpha = p.alpha;
                    hi_f = p.f;
                } else {
                    if curvature(&p) {
                        return Some(p);
                    }
                    if p.dphi * (hi_alpha - lo.alpha) >= 0.0 {
                        hi_alpha = lo.alpha;
                        hi_f = lo.f;
                    }
                    lo = p;
                }
            }
        }
    }
    (lo.alpha > 0.0).then_some(lo)
}

/// Quasi-Newton minimization of `f`, which returns `(value, gradient)`.
///
/// Stops when the loss reaches `loss_tol`, `‖g‖∞ ≤ grad_tol`, after
/// `max_iter` steps, or when no acceptable step can be found; in the last
/// case the best iterate is returned with `line_search_failed` set. An error
/// from `f` at the starting point is propagated.
pub fn bfgs_minimize<F>(mut f: F, w0: &[f64], opts: &BfgsOptions) -> Result<(Vec<f64>, BfgsTrace)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut w = w0.to_vec();
    let (mut fw, mut g) = f(&w)?;
    if !fw.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("objective at the starting point ({fw})")));
    }
    if g.len() != w.len() {
        return Err(Error::Shape {
            op: "bfgs".into(),
            expected: vec![w.len()],
            got: vec![g.len()],
        });
    }
    let mut trace = BfgsTrace {
        losses: vec![fw],
        grad_norms: vec![inf_norm(&g)],
        evaluations: 1,
        stop: StopReason::MaxIterations,
        line_search_failed: false,
    };
    let mut hinv = InverseHessian::new(w.len(), opts.memory);
    let mut it = 0;
    loop {
        if fw <= opts.loss_tol {
            trace.stop = StopReason::LossTolerance;
            break;
        }
        if inf_norm(&g) <= opts.grad_tol {
            trace.stop = StopReason::GradientTolerance;
            break;
        }
        if it >= opts.max_iter {
            trace.stop = StopReason::MaxIterations;
            break;
        }
        let mut d = hinv.direction(&g);
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            hinv.reset();
            d = hinv.direction(&g);
            dphi0 = dot(&g, &d);
        }
        let alpha0 = if hinv.is_fresh() { (1.0 / dot(&g, &g).sqrt()).min(1.0) } else { 1.0 };
        let mut found = strong_wolfe(&mut f, &w, fw, dphi0, &d, alpha0, opts, &mut trace.evaluations);
        if found.is_none() && !hinv.is_fresh() {
            hinv.reset();
            d = hinv.direction(&g);
            dphi0 = dot(&g, &d);
            let a0 = (1.0 / dot(&g, &g).sqrt()).min(1.0);
            found = strong_wolfe(&mut f, &w, fw, dphi0, &d, a0, opts, &mut trace.evaluations);
        }
        let Some(p) = found else {
            trace.stop = StopReason::LineSearchFailed;
            trace.line_search_failed = true;
            break;
        };
        let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        w.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        fw = p.f;
        g = p.g;
        hinv.update(s, y);
        trace.losses.push(fw);
        trace.grad_norms.push(inf_norm(&g));
        it += 1;
        log::debug!("bfgs iteration {it}: loss {fw:e}, |g|inf {:e}", inf_norm(&g));
    }
    Ok((w, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        Ok((f, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
    }

    #[test]
    fn quadratic_converges_quickly() {
        let a = [1.0, -2.0, 3.0, 0.5, -1.5];
        let f = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
            let g: Vec<f64> = w.iter().zip(&a).map(|(x, y)| x - y).collect();
            Ok((0.5 * dot(&g, &g), g))
        };
        let (w, t) = bfgs_minimize(f, &[0.0; 5], &BfgsOptions { grad_tol: 1e-10, ..Default::default() }).unwrap();
        assert!(t.iterations() <= a.len() + 2, "{}", t.iterations());
        assert!(w.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-8));
    }

    #[test]
    fn rosenbrock_dense_and_limited() {
        for memory in [None, Some(10)] {
            let opts = BfgsOptions {
                max_iter: 100,
                loss_tol: 1e-8,
                memory,
                ..Default::default()
            };
            let (_, t) = bfgs_minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
            assert!(t.final_loss() < 1e-8, "{memory:?}: {}", t.final_loss());
            assert!(t.losses.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn optimal_start_takes_no_steps() {
        let (w, t) = bfgs_minimize(rosenbrock, &[1.0, 1.0], &BfgsOptions::default()).unwrap();
        assert_eq!(t.iterations(), 0);
        assert_eq!(t.evaluations, 1);
        assert_eq!(w, vec![1.0, 1.0]);
    }

    #[test]
    fn failing_objective_returns_best_so_far() {
        // a kink at the minimum defeats the curvature condition eventually
        let f = |w: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((w[0].abs(), vec![w[0].signum()])) };
        let (w, t) = bfgs_minimize(f, &[3.0], &BfgsOptions { max_iter: 200, ..Default::default() }).unwrap();
        assert!(w[0].abs() <= 3.0);
        assert!(t.losses.windows(2).all(|p| p[1] <= p[0]));
    }
}
