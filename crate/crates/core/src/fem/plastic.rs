use std::f64::consts::SQRT_2;

use super::assembly::{assemble, assemble_full, local, norm2, ElementMatrix, ElementVector};
use super::dual::{Dual, Real};
use super::elasticity::{elastic_matrix, PlaneModel};
use super::linalg::{SparseLu, Triplets};
use super::mesh::{DofMap, Mesh};
use super::quad::QuadRule;
use crate::error::{Error, Result};

/// Voigt vector (xx, yy, xy); strains carry engineering shear.
pub type Voigt = [f64; 3];

/// Plane-stress von Mises equivalent stress.
pub fn von_mises(s: &Voigt) -> f64 {
    (s[0] * s[0] + s[1] * s[1] - s[0] * s[1] + 3.0 * s[2] * s[2]).sqrt()
}

/// Which stiffness drives the Newton iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlasticTangent {
    /// Exact linearization of the return map.
    Consistent,
    /// Elastic predictor stiffness.
    Elastic,
}

/// Stress update inputs in the order they are seeded for differentiation.
const N_IN: usize = 11;
type D11 = Dual<N_IN>;

/// Return-map scalars for a trial stress in the eigenbasis of the plane-stress
/// projector: `a1 = (σ11+σ22)/√2`, `a2 = (σ22−σ11)/√2`, `a3 = σ12`.
struct ReturnMap<T> {
    a: [T; 3],
    k1: T,
    k2: T,
    s0: T,
}

impl<T: Real> ReturnMap<T> {
    fn phi(&self, dg: T) -> T {
        let d1 = self.k1 * dg + 1.0;
        let d2 = self.k2 * dg + 1.0;
        let [a1, a2, a3] = self.a;
        a1 * a1 / (d1 * d1 * 6.0) + a2 * a2 / (d2 * d2 * 2.0) + a3 * a3 / (d2 * d2) - self.s0 * self.s0 / 3.0
    }

    fn dphi(&self, dg: T) -> T {
        let d1 = self.k1 * dg + 1.0;
        let d2 = self.k2 * dg + 1.0;
        let [a1, a2, a3] = self.a;
        -(a1 * a1 * self.k1 / (d1 * d1 * d1 * 3.0)) - (a2 * a2 + a3 * a3 * 2.0) * self.k2 / (d2 * d2 * d2)
    }

    fn stress(&self, dg: T) -> [T; 3] {
        let b1 = self.a[0] / (self.k1 * dg + 1.0);
        let d2 = self.k2 * dg + 1.0;
        let b2 = self.a[1] / d2;
        [(b1 - b2) / SQRT_2, (b1 + b2) / SQRT_2, self.a[2] / d2]
    }
}

fn elastic_trial<T: Real>(eps: [T; 3], eps_prev: [T; 3], sig_prev: [T; 3], e: T, nu: f64) -> [T; 3] {
    let c = e / (1.0 - nu * nu);
    let d = [eps[0] - eps_prev[0], eps[1] - eps_prev[1], eps[2] - eps_prev[2]];
    [
        sig_prev[0] + c * (d[0] + d[1] * nu),
        sig_prev[1] + c * (d[0] * nu + d[1]),
        sig_prev[2] + c * d[2] * (0.5 * (1.0 - nu)),
    ]
}

fn return_map<T: Real>(trial: [T; 3], e: T, s0: T, nu: f64) -> ReturnMap<T> {
    ReturnMap {
        a: [(trial[0] + trial[1]) / SQRT_2, (trial[1] - trial[0]) / SQRT_2, trial[2]],
        k1: e / (3.0 * (1.0 - nu)),
        k2: e / (1.0 + nu),
        s0,
    }
}

/// Plastic multiplier of the closest-point projection, `None` when elastic.
fn multiplier(m: &ReturnMap<f64>) -> Option<f64> {
    if m.phi(0.0) <= 0.0 {
        return None;
    }
    let tol = 1e-14 * m.s0 * m.s0;
    let mut dg = 0.0;
    for _ in 0..100 {
        let f = m.phi(dg);
        if f <= tol {
            break;
        }
        let step = f / m.dphi(dg);
        dg -= step;
        if step.abs() <= 1e-16 * dg.abs() {
            break;
        }
    }
    Some(dg)
}

/// Perfectly plastic J2 stress update in plane stress.
///
/// The trial stress `σ_prev + C(ε − ε_prev)` is projected onto the von Mises
/// surface of radius `σ₀` along the compliance-weighted normal, which keeps
/// `σ33 = 0`. Returns the updated stress.
pub fn j2_stress_update(eps: &Voigt, eps_prev: &Voigt, sig_prev: &Voigt, e: f64, nu: f64, s0: f64) -> Voigt {
    let trial = elastic_trial(*eps, *eps_prev, *sig_prev, e, nu);
    let m = return_map(trial, e, s0, nu);
    match multiplier(&m) {
        None => trial,
        Some(dg) => m.stress(dg),
    }
}

/// Stress and its Jacobian with respect to
/// `(ε[0..3], ε_prev[3..6], σ_prev[6..9], E[9], σ₀[10])`.
pub fn j2_stress_jacobian(eps: &Voigt, eps_prev: &Voigt, sig_prev: &Voigt, e: f64, nu: f64, s0: f64) -> (Voigt, [[f64; N_IN]; 3]) {
    let seed = |v: &Voigt, off: usize| [0, 1, 2].map(|i| D11::var(v[i], off + i));
    let ed = D11::var(e, 9);
    let sd = D11::var(s0, 10);
    let trial = elastic_trial(seed(eps, 0), seed(eps_prev, 3), seed(sig_prev, 6), ed, nu);
    let md = return_map(trial, ed, sd, nu);
    let mf = return_map(trial.map(|t| t.v), e, s0, nu);
    let out = match multiplier(&mf) {
        None => trial,
        Some(dg) => {
            // one Newton correction carries the implicit derivative of Δγ
            let g = D11::cst(dg);
            let dgd = g - md.phi(g) / md.dphi(g);
            let mut s = md.stress(dgd);
            let exact = mf.stress(dg);
            for (si, ei) in s.iter_mut().zip(exact) {
                si.v = ei;
            }
            s
        }
    };
    (out.map(|x| x.v), out.map(|x| x.d))
}

#[derive(Clone, Copy, Debug)]
pub struct PlasticOptions {
    pub nu: f64,
    pub tangent: PlasticTangent,
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for PlasticOptions {
    fn default() -> Self {
        Self {
            nu: 0.3,
            tangent: PlasticTangent::Consistent,
            rtol: 1e-8,
            max_iter: 50,
        }
    }
}

/// Converged load path with committed quadrature-point states.
#[derive(Clone, Debug)]
pub struct PlasticHistory {
    pub loads: Vec<f64>,
    /// Full displacement vectors per step.
    pub u: Vec<Vec<f64>>,
    /// Total strain per quadrature point (`4·element + point`), per step.
    pub eps: Vec<Vec<Voigt>>,
    pub sig: Vec<Vec<Voigt>>,
    /// Volume-averaged `σ_yy` per step.
    pub sbar: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl PlasticHistory {
    pub fn n_steps(&self) -> usize {
        self.loads.len()
    }
}

/// Uniaxial tension of a unit block with per-element `(E, σ₀)`.
///
/// Bottom edge fixed in y, lower-left corner fixed in x, top edge displaced in
/// y. Parameters are laid out as `[E_0 … E_{n−1}, σ₀_0 … σ₀_{n−1}]`.
#[derive(Clone, Debug)]
pub struct Plasticity {
    pub mesh: Mesh,
    pub opts: PlasticOptions,
    dofs: DofMap,
    quad: QuadRule,
    top_y: Vec<usize>,
}

/// Per-element return of [`Plasticity::element`].
struct ElementState {
    fe: ElementVector,
    ke: Option<ElementMatrix>,
    eps: [Voigt; 4],
    sig: [Voigt; 4],
}

impl Plasticity {
    pub fn new(nx: usize, ny: usize, opts: PlasticOptions) -> Result<Self> {
        let mesh = Mesh::grid(nx, ny, false)?;
        let top_y: Vec<usize> = mesh.top_nodes().iter().map(|&n| 2 * n + 1).collect();
        let mut fixed = top_y.clone();
        fixed.extend(mesh.bottom_nodes().iter().map(|&n| 2 * n + 1));
        fixed.push(0);
        let dofs = DofMap::dirichlet(2 * mesh.n_nodes(), &fixed);
        let quad = QuadRule::new(mesh.hx(), mesh.hy());
        Ok(Self {
            mesh,
            opts,
            dofs,
            quad,
            top_y,
        })
    }

    pub fn n_elems(&self) -> usize {
        self.mesh.n_elems()
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_elems()
    }

    pub fn n_free(&self) -> usize {
        self.dofs.n_free
    }

    /// Equally spaced load levels from `first` to `last`.
    pub fn load_schedule(first: f64, last: f64, n: usize) -> Vec<f64> {
        match n {
            0 => vec![],
            1 => vec![last],
            _ => (0..n).map(|i| first + (last - first) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Shape {
                op: "plasticity".into(),
                expected: vec![self.n_params()],
                got: vec![theta.len()],
            });
        }
        if theta.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::contract("plasticity parameters must be positive"));
        }
        Ok(())
    }

    fn element(&self, theta: &[f64], ue: &ElementVector, e: usize, prev: (&[Voigt], &[Voigt]), tangent: bool) -> ElementState {
        let n = self.n_elems();
        let (em, s0) = (theta[e], theta[n + e]);
        let nu = self.opts.nu;
        let w = self.quad.weight;
        let mut st = ElementState {
            fe: [0.0; 8],
            ke: tangent.then_some([[0.0; 8]; 8]),
            eps: [[0.0; 3]; 4],
            sig: [[0.0; 3]; 4],
        };
        for q in 0..4 {
            let i = 4 * e + q;
            let eps = self.quad.strain(q, ue);
            st.eps[q] = eps;
            if let Some(ke) = st.ke.as_mut() {
                let (s, jac) = j2_stress_jacobian(&eps, &prev.0[i], &prev.1[i], em, nu, s0);
                st.sig[q] = s;
                let d = match self.opts.tangent {
                    PlasticTangent::Consistent => [0, 1, 2].map(|r| [jac[r][0], jac[r][1], jac[r][2]]),
                    PlasticTangent::Elastic => elastic_matrix(em, nu, PlaneModel::Stress),
                };
                self.quad.add_btdb(q, &d, w, ke);
            } else {
                st.sig[q] = j2_stress_update(&eps, &prev.0[i], &prev.1[i], em, nu, s0);
            }
            self.quad.add_bt(q, &st.sig[q], w, &mut st.fe);
        }
        st
    }

    /// Reduced residual and optional tangent at full displacement `u`.
    pub fn assemble(&self, theta: &[f64], u: &[f64], prev: (&[Voigt], &[Voigt]), tangent: bool) -> Result<(Vec<f64>, Option<Triplets>)> {
        assemble(&self.mesh, &self.dofs, tangent, |e| {
            let st = self.element(theta, &local(&self.mesh, u, e), e, prev, tangent);
            Ok((st.fe, st.ke))
        })
    }

    /// Strains and stresses at every quadrature point for displacement `u`.
    fn states(&self, theta: &[f64], u: &[f64], prev: (&[Voigt], &[Voigt])) -> (Vec<Voigt>, Vec<Voigt>) {
        let mut eps = Vec::with_capacity(4 * self.n_elems());
        let mut sig = Vec::with_capacity(4 * self.n_elems());
        for e in 0..self.n_elems() {
            let st = self.element(theta, &local(&self.mesh, u, e), e, prev, false);
            eps.extend(st.eps);
            sig.extend(st.sig);
        }
        (eps, sig)
    }

    /// Volume average of `σ_yy` over the unit block.
    pub fn average_syy(&self, sig: &[Voigt]) -> f64 {
        let w = self.quad.weight;
        sig.iter().map(|s| w * s[1]).sum::<f64>() / (self.mesh.n_elems() as f64 * self.quad.area)
    }

    fn residual_scale(&self, theta: &[f64], load: f64) -> f64 {
        let emax = theta[..self.n_elems()].iter().fold(0.0f64, |m, v| m.max(*v));
        emax * load.abs().max(1e-6) * self.quad.area
    }

    fn newton(&self, theta: &[f64], load: f64, guess: Vec<f64>, prev: (&[Voigt], &[Voigt])) -> Result<(Vec<f64>, usize)> {
        let mut u = guess;
        for &d in &self.top_y {
            u[d] = load;
        }
        let (mut r, _) = self.assemble(theta, &u, prev, false)?;
        let mut history = vec![norm2(&r)];
        let tol = (self.opts.rtol * history[0]).max(1e-12 * self.residual_scale(theta, load));
        for it in 0..self.opts.max_iter {
            let rn = *history.last().unwrap();
            if rn <= tol {
                return Ok((u, it));
            }
            let (_, k) = self.assemble(theta, &u, prev, true)?;
            let du = SparseLu::factor(&k.expect("tangent requested"))?.solve(&r)?;
            let base = self.dofs.gather(&u);
            let mut step = 1.0;
            loop {
                let red: Vec<f64> = base.iter().zip(&du).map(|(a, d)| a - step * d).collect();
                let mut trial = u.clone();
                self.dofs.scatter_into(&red, &mut trial);
                let (rt, _) = self.assemble(theta, &trial, prev, false)?;
                if norm2(&rt) < rn || step < 1.0 / 256.0 {
                    u = trial;
                    r = rt;
                    break;
                }
                step *= 0.5;
            }
            history.push(norm2(&r));
        }
        if *history.last().unwrap() <= tol {
            return Ok((u, self.opts.max_iter));
        }
        Err(Error::NonConvergence {
            iterations: self.opts.max_iter,
            history,
        })
    }

    /// Runs the monotone load path, committing the quadrature state after each step.
    pub fn incremental_solve(&self, theta: &[f64], loads: &[f64]) -> Result<PlasticHistory> {
        self.check_theta(theta)?;
        if loads.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::contract("plasticity load schedule must be monotone"));
        }
        let nq = 4 * self.n_elems();
        let mut eps_prev = vec![[0.0; 3]; nq];
        let mut sig_prev = vec![[0.0; 3]; nq];
        let mut u = vec![0.0; 2 * self.mesh.n_nodes()];
        let mut prev_load = 0.0;
        let mut h = PlasticHistory {
            loads: loads.to_vec(),
            u: vec![],
            eps: vec![],
            sig: vec![],
            sbar: vec![],
            iterations: vec![],
        };
        for (k, &load) in loads.iter().enumerate() {
            let mut guess = u.clone();
            for (n, c) in self.mesh.coords.iter().enumerate() {
                if self.dofs.map[2 * n + 1].is_some() {
                    guess[2 * n + 1] += (load - prev_load) * c[1];
                }
            }
            let (un, its) = self
                .newton(theta, load, guess, (&eps_prev, &sig_prev))
                .map_err(|e| Error::LoadStep { step: k + 1, source: Box::new(e) })?;
            let (eps, sig) = self.states(theta, &un, (&eps_prev, &sig_prev));
            h.sbar.push(self.average_syy(&sig));
            h.u.push(un.clone());
            h.eps.push(eps.clone());
            h.sig.push(sig.clone());
            h.iterations.push(its);
            u = un;
            eps_prev = eps;
            sig_prev = sig;
            prev_load = load;
        }
        Ok(h)
    }

    /// Largest `σ_vm − σ₀` over all points and steps of a history.
    pub fn max_yield_excess(&self, theta: &[f64], h: &PlasticHistory) -> f64 {
        let n = self.n_elems();
        h.sig
            .iter()
            .flat_map(|step| step.iter().enumerate().map(|(i, s)| von_mises(s) - theta[n + i / 4]))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete adjoint of the load path.
    ///
    /// `cot_sbar[k]` is the cotangent of the averaged stress at step `k`.
    /// The sweep runs from the last step back to the first: each step solves
    /// one transposed tangent system and hands cotangents on the previous
    /// quadrature state down to the step before.
    pub fn path_adjoint(&self, theta: &[f64], h: &PlasticHistory, cot_sbar: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let steps = h.n_steps();
        let nq = 4 * self.n_elems();
        if cot_sbar.len() != steps || h.u.len() != steps || h.eps.len() != steps || h.sig.len() != steps {
            return Err(Error::contract(format!(
                "path adjoint needs a full history: {} loads, {} states, {} cotangents",
                steps,
                h.sig.len(),
                cot_sbar.len()
            )));
        }
        let n = self.n_elems();
        let mut v_theta = vec![0.0; self.n_params()];
        if cot_sbar.iter().all(|&c| c == 0.0) {
            return Ok(v_theta);
        }
        let zero = vec![[0.0; 3]; nq];
        let avg = self.quad.weight / (n as f64 * self.quad.area);
        let mut g_sig = vec![[0.0; 3]; nq];
        let mut g_eps = vec![[0.0; 3]; nq];
        for k in (0..steps).rev() {
            for g in g_sig.iter_mut() {
                g[1] += cot_sbar[k] * avg;
            }
            let (eps_prev, sig_prev) = if k == 0 { (&zero, &zero) } else { (&h.eps[k - 1], &h.sig[k - 1]) };
            let jac: Vec<[[f64; N_IN]; 3]> = (0..nq)
                .map(|i| {
                    let e = i / 4;
                    j2_stress_jacobian(&h.eps[k][i], &eps_prev[i], &sig_prev[i], theta[e], self.opts.nu, theta[n + e]).1
                })
                .collect();
            // v_u = Σ Bᵀ (Dᵀ gσ + gε)
            let mut parts = Vec::with_capacity(n);
            for e in 0..n {
                let mut fe = [0.0; 8];
                for q in 0..4 {
                    let i = 4 * e + q;
                    let mut s = g_eps[i];
                    for (c, sc) in s.iter_mut().enumerate() {
                        for r in 0..3 {
                            *sc += jac[i][r][c] * g_sig[i][r];
                        }
                    }
                    self.quad.add_bt(q, &s, 1.0, &mut fe);
                }
                parts.push(fe);
            }
            let v_full = assemble_full(&self.mesh, &parts);
            let v_u = self.dofs.reduce(&v_full);
            let lambda_full = if v_u.iter().all(|&v| v == 0.0) {
                vec![0.0; v_full.len()]
            } else {
                let (_, kt) = self.assemble_consistent(theta, &h.u[k], (eps_prev, sig_prev))?;
                let rhs: Vec<f64> = v_u.iter().map(|v| -v).collect();
                let lambda = SparseLu::factor(&kt)?.solve_transpose(&rhs)?;
                let mut lf = vec![0.0; v_full.len()];
                self.dofs.scatter_into(&lambda, &mut lf);
                lf
            };
            let mut next_sig = vec![[0.0; 3]; nq];
            let mut next_eps = vec![[0.0; 3]; nq];
            for e in 0..n {
                let le = local(&self.mesh, &lambda_full, e);
                for q in 0..4 {
                    let i = 4 * e + q;
                    let bl = self.quad.strain(q, &le);
                    let hq: [f64; 3] = [0, 1, 2].map(|r| g_sig[i][r] + self.quad.weight * bl[r]);
                    for r in 0..3 {
                        v_theta[e] += jac[i][r][9] * hq[r];
                        v_theta[n + e] += jac[i][r][10] * hq[r];
                        for c in 0..3 {
                            next_eps[i][c] += jac[i][r][3 + c] * hq[r];
                            next_sig[i][c] += jac[i][r][6 + c] * hq[r];
                        }
                    }
                }
            }
            g_sig = next_sig;
            g_eps = next_eps;
        }
        Ok(v_theta)
    }

    fn assemble_consistent(&self, theta: &[f64], u: &[f64], prev: (&[Voigt], &[Voigt])) -> Result<(Vec<f64>, Triplets)> {
        let mut exact = self.clone();
        exact.opts.tangent = PlasticTangent::Consistent;
        let (r, k) = exact.assemble(theta, u, prev, true)?;
        Ok((r, k.expect("tangent requested")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elastic_step_keeps_trial() {
        let s = j2_stress_update(&[1e-4, 0.0, 0.0], &[0.0; 3], &[0.0; 3], 1e5, 0.3, 300.0);
        let c = 1e5 / (1.0 - 0.09);
        assert!((s[0] - c * 1e-4).abs() < 1e-10);
        assert!((s[1] - c * 0.3e-4).abs() < 1e-10);
    }

    #[test]
    fn double_trial_returns_to_surface() {
        // uniaxial trial at twice the yield stress
        let s0 = 300.0;
        let trial = [0.0, 2.0 * s0, 0.0];
        let s = j2_stress_update(&[0.0; 3], &[0.0; 3], &trial, 1e5, 0.3, s0);
        assert!((von_mises(&s) - s0).abs() < 1e-9);
        assert!(s[1] > 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let eps = [2e-3, 5e-3, 1e-3];
        let ep = [1e-3, 2e-3, 0.0];
        let sp = [50.0, 150.0, 20.0];
        let (e, s0, nu) = (1e5, 300.0, 0.3);
        let (_, jac) = j2_stress_jacobian(&eps, &ep, &sp, e, nu, s0);
        let mut x: Vec<f64> = eps.iter().chain(&ep).chain(&sp).copied().collect();
        x.extend([e, s0]);
        let f = |x: &[f64]| {
            j2_stress_update(&[x[0], x[1], x[2]], &[x[3], x[4], x[5]], &[x[6], x[7], x[8]], x[9], nu, x[10])
        };
        for j in 0..N_IN {
            let h = 1e-7 * x[j].abs().max(1e-3);
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let (fp, fm) = (f(&xp), f(&xm));
            for r in 0..3 {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                let scale = jac[r][j].abs().max(1e-3 * (1.0 + jac[r].iter().fold(0.0f64, |m, v| m.max(v.abs()))));
                assert!((fd - jac[r][j]).abs() / scale < 1e-5, "d{r}/d{j}: {fd} vs {}", jac[r][j]);
            }
        }
    }

    #[test]
    fn soft_elastic_path_is_linear() {
        let p = Plasticity::new(2, 2, PlasticOptions::default()).unwrap();
        let theta = [vec![1e3; 4], vec![30.0; 4]].concat();
        let h = p.incremental_solve(&theta, &[1e-3, 2e-3, 4e-3]).unwrap();
        for (s, l) in h.sbar.iter().zip(&h.loads) {
            assert!((s - 1e3 * l).abs() < 1e-9, "{s} vs {}", 1e3 * l);
        }
    }

    #[test]
    fn zero_cotangent_gives_zero() {
        let p = Plasticity::new(2, 2, PlasticOptions::default()).unwrap();
        let theta = [vec![1e5; 4], vec![300.0; 4]].concat();
        let h = p.incremental_solve(&theta, &[1e-3, 5e-3]).unwrap();
        assert!(p.path_adjoint(&theta, &h, &[0.0, 0.0]).unwrap().iter().all(|&v| v == 0.0));
    }
}
