use super::assembly::{assemble, local, norm2, ElementMatrix, ElementVector};
use super::dual::{Dual, Real};
use super::linalg::{SparseLu, Triplets};
use super::mesh::{DofMap, Mesh};
use super::quad::QuadRule;
use crate::adjoint::{AdjointWorkspace, ResidualProblem};
use crate::error::{Error, Result};

/// Energy density and first Piola–Kirchhoff stress for a plane-strain
/// embedding (`F₃₃ = 1`). `f = [F11, F12, F21, F22]`; requires `det F > 0`.
fn neo_hookean<T: Real>(f: [T; 4], g: f64, k: f64) -> (T, [T; 4]) {
    let j = f[0] * f[3] - f[1] * f[2];
    let i1 = f[0] * f[0] + f[1] * f[1] + f[2] * f[2] + f[3] * f[3] + 1.0;
    let jm23 = j.powf(-2.0 / 3.0);
    let w = (jm23 * i1 - 3.0) * (0.5 * g) + (j - 1.0) * (j - 1.0) * (0.5 * k);
    // F^{-T} = [[F22, −F21], [−F12, F11]] / J
    let fit = [f[3] / j, -f[2] / j, -f[1] / j, f[0] / j];
    let a = jm23 * g;
    let b = i1 / 3.0;
    let c = j * (j - 1.0) * k;
    let p = [
        a * (f[0] - b * fit[0]) + c * fit[0],
        a * (f[1] - b * fit[1]) + c * fit[1],
        a * (f[2] - b * fit[2]) + c * fit[2],
        a * (f[3] - b * fit[3]) + c * fit[3],
    ];
    (w, p)
}

/// `(W, P)` at deformation gradient `f` (row-major 2×2).
pub fn neo_hookean_kernel(f: &[[f64; 2]; 2], g: f64, k: f64, element: usize) -> Result<(f64, [[f64; 2]; 2])> {
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    if !(det > 0.0) {
        return Err(Error::ElementInversion { element, det_f: det });
    }
    let (w, p) = neo_hookean([f[0][0], f[0][1], f[1][0], f[1][1]], g, k);
    Ok((w, [[p[0], p[1]], [p[2], p[3]]]))
}

/// `(P, ∂P/∂F)` with flattened row-major indices.
fn stress_tangent(f: [f64; 4], g: f64, k: f64) -> ([f64; 4], [[f64; 4]; 4]) {
    let fd = [0, 1, 2, 3].map(|i| Dual::<4>::var(f[i], i));
    let (_, p) = neo_hookean(fd, g, k);
    (p.map(|x| x.v), p.map(|x| x.d))
}

/// Dirichlet conditions for the uniaxial stretch test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StretchBc {
    /// Bottom edge fully fixed; top edge loaded in y with `ux` free.
    #[default]
    FixedBase,
    /// Bottom edge fully fixed; top edge moves rigidly in y with `ux = 0`.
    Clamped,
    /// Bottom edge fixed in y plus one corner in x; top edge loaded in y only.
    Roller,
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_iter: 50,
        }
    }
}

/// Converged equilibrium of one load level.
#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Neo-Hookean block with per-element Young's modulus and shared ν.
#[derive(Clone, Debug)]
pub struct Hyperelastic {
    pub mesh: Mesh,
    pub nu: f64,
    pub bc: StretchBc,
    pub newton: NewtonOptions,
    dofs: DofMap,
    quad: QuadRule,
    top_y: Vec<usize>,
}

/// Solution of a load path.
#[derive(Clone, Debug)]
pub struct HyperPath {
    pub loads: Vec<f64>,
    /// Full displacement vectors per load level.
    pub u: Vec<Vec<f64>>,
    /// Total strain energy per load level.
    pub energy: Vec<f64>,
}

impl Hyperelastic {
    pub fn new(nx: usize, ny: usize, nu: f64, bc: StretchBc) -> Result<Self> {
        let mesh = Mesh::grid(nx, ny, false)?;
        let mut fixed = vec![];
        let top_y: Vec<usize> = mesh.top_nodes().iter().map(|&n| 2 * n + 1).collect();
        fixed.extend(&top_y);
        match bc {
            StretchBc::Clamped => {
                for n in mesh.bottom_nodes() {
                    fixed.extend([2 * n, 2 * n + 1]);
                }
                fixed.extend(mesh.top_nodes().iter().map(|&n| 2 * n));
            }
            StretchBc::FixedBase => {
                for n in mesh.bottom_nodes() {
                    fixed.extend([2 * n, 2 * n + 1]);
                }
            }
            StretchBc::Roller => {
                fixed.extend(mesh.bottom_nodes().iter().map(|&n| 2 * n + 1));
                fixed.push(0);
            }
        }
        let dofs = DofMap::dirichlet(2 * mesh.n_nodes(), &fixed);
        let quad = QuadRule::new(mesh.hx(), mesh.hy());
        Ok(Self {
            mesh,
            nu,
            bc,
            newton: NewtonOptions::default(),
            dofs,
            quad,
            top_y,
        })
    }

    pub fn n_elems(&self) -> usize {
        self.mesh.n_elems()
    }

    pub fn n_free(&self) -> usize {
        self.dofs.n_free
    }

    /// Shear and bulk moduli per unit Young's modulus.
    fn unit_moduli(&self) -> (f64, f64) {
        (0.5 / (1.0 + self.nu), 1.0 / (3.0 * (1.0 - 2.0 * self.nu)))
    }

    fn deformation_gradient(&self, g: usize, ue: &ElementVector) -> [f64; 4] {
        let mut f = [1.0, 0.0, 0.0, 1.0];
        for (a, d) in self.quad.grads[g].iter().enumerate() {
            let (ux, uy) = (ue[2 * a], ue[2 * a + 1]);
            f[0] += ux * d[0];
            f[1] += ux * d[1];
            f[2] += uy * d[0];
            f[3] += uy * d[1];
        }
        f
    }

    fn check_det(f: &[f64; 4], e: usize) -> Result<()> {
        let det = f[0] * f[3] - f[1] * f[2];
        if !(det > 0.0) {
            return Err(Error::ElementInversion { element: e, det_f: det });
        }
        Ok(())
    }

    /// Internal force and optionally stiffness of element `e` per unit modulus.
    fn element_unit(&self, ue: &ElementVector, e: usize, tangent: bool) -> Result<(ElementVector, Option<ElementMatrix>)> {
        let (g, k) = self.unit_moduli();
        let mut fe = [0.0; 8];
        let mut ke = tangent.then_some([[0.0; 8]; 8]);
        for q in 0..4 {
            let f = self.deformation_gradient(q, ue);
            Self::check_det(&f, e)?;
            let (p, a) = stress_tangent(f, g, k);
            let grads = &self.quad.grads[q];
            let w = self.quad.weight;
            for (n, dn) in grads.iter().enumerate() {
                for i in 0..2 {
                    fe[2 * n + i] += w * (p[2 * i] * dn[0] + p[2 * i + 1] * dn[1]);
                }
            }
            if let Some(ke) = ke.as_mut() {
                for (na, da) in grads.iter().enumerate() {
                    for i in 0..2 {
                        for (nb, db) in grads.iter().enumerate() {
                            for kk in 0..2 {
                                let mut s = 0.0;
                                for j in 0..2 {
                                    for l in 0..2 {
                                        s += da[j] * a[2 * i + j][2 * kk + l] * db[l];
                                    }
                                }
                                ke[2 * na + i][2 * nb + kk] += w * s;
                            }
                        }
                    }
                }
            }
        }
        Ok((fe, ke))
    }

    fn element_energy_unit(&self, ue: &ElementVector, e: usize) -> Result<f64> {
        let (g, k) = self.unit_moduli();
        let mut w = 0.0;
        for q in 0..4 {
            let f = self.deformation_gradient(q, ue);
            Self::check_det(&f, e)?;
            w += self.quad.weight * neo_hookean(f, g, k).0;
        }
        Ok(w)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_elems() {
            return Err(Error::Shape {
                op: "hyperelastic".into(),
                expected: vec![self.n_elems()],
                got: vec![theta.len()],
            });
        }
        Ok(())
    }

    /// Residual (and tangent) on the reduced DOFs of full displacement `u`.
    pub fn assemble(&self, theta: &[f64], u: &[f64], tangent: bool) -> Result<(Vec<f64>, Option<Triplets>)> {
        assemble(&self.mesh, &self.dofs, tangent, |e| {
            let (mut fe, mut ke) = self.element_unit(&local(&self.mesh, u, e), e, tangent)?;
            fe.iter_mut().for_each(|v| *v *= theta[e]);
            if let Some(ke) = ke.as_mut() {
                ke.iter_mut().flatten().for_each(|v| *v *= theta[e]);
            }
            Ok((fe, ke))
        })
    }

    pub fn strain_energy(&self, theta: &[f64], u: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for e in 0..self.n_elems() {
            total += theta[e] * self.element_energy_unit(&local(&self.mesh, u, e), e)?;
        }
        Ok(total)
    }

    fn with_load(&self, u: &[f64], load: f64) -> Vec<f64> {
        let mut full = u.to_vec();
        for &d in &self.top_y {
            full[d] = load;
        }
        full
    }

    /// Newton iteration at prescribed top displacement `load`, starting from `u_init`.
    pub fn newton_solve(&self, theta: &[f64], load: f64, u_init: &[f64]) -> Result<NewtonOutcome> {
        self.check_theta(theta)?;
        let opts = self.newton;
        let mut u = self.with_load(u_init, load);
        let (mut r, _) = self.assemble(theta, &u, false)?;
        let r0 = norm2(&r);
        let tol = (opts.rtol * r0).max(opts.atol);
        let mut history = vec![r0];
        for it in 0..opts.max_iter {
            if *history.last().unwrap() <= tol {
                return Ok(NewtonOutcome { u, iterations: it, history });
            }
            let (_, k) = self.assemble(theta, &u, true)?;
            let du = SparseLu::factor(&k.expect("tangent requested"))?.solve(&r)?;
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let mut trial_red = self.dofs.gather(&u);
                trial_red.iter_mut().zip(&du).for_each(|(a, d)| *a -= step * d);
                let mut trial = u.clone();
                self.dofs.scatter_into(&trial_red, &mut trial);
                match self.assemble(theta, &trial, false) {
                    Ok((rt, _)) if norm2(&rt) < (1.0 - 1e-4 * step) * history.last().unwrap() || step < 1.0 / 64.0 => {
                        accepted = Some((trial, rt));
                        break;
                    }
                    Ok(_) | Err(Error::ElementInversion { .. }) => step *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            let (nu, nr) = accepted.ok_or_else(|| Error::NonConvergence {
                iterations: it + 1,
                history: history.clone(),
            })?;
            u = nu;
            r = nr;
            history.push(norm2(&r));
        }
        if *history.last().unwrap() <= tol {
            return Ok(NewtonOutcome {
                u,
                iterations: opts.max_iter,
                history,
            });
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            history,
        })
    }

    /// Solves each load level in turn, continuing from the previous state
    /// with a linear-in-y predictor.
    pub fn solve_path(&self, theta: &[f64], loads: &[f64]) -> Result<HyperPath> {
        self.check_theta(theta)?;
        let mut u = vec![0.0; 2 * self.mesh.n_nodes()];
        let mut prev = 0.0;
        let mut us = Vec::with_capacity(loads.len());
        let mut energy = Vec::with_capacity(loads.len());
        for (k, &load) in loads.iter().enumerate() {
            let guess = self.predict(&u, load - prev);
            let out = self
                .newton_solve(theta, load, &guess)
                .or_else(|_| self.substepped(theta, &u, prev, load))
                .map_err(|e| Error::LoadStep { step: k + 1, source: Box::new(e) })?;
            u = out.u;
            prev = load;
            energy.push(self.strain_energy(theta, &u)?);
            us.push(u.clone());
        }
        Ok(HyperPath {
            loads: loads.to_vec(),
            u: us,
            energy,
        })
    }

    fn predict(&self, u: &[f64], dload: f64) -> Vec<f64> {
        let mut g = u.to_vec();
        for (n, c) in self.mesh.coords.iter().enumerate() {
            if self.dofs.map[2 * n + 1].is_some() {
                g[2 * n + 1] += dload * c[1];
            }
        }
        g
    }

    fn substepped(&self, theta: &[f64], u0: &[f64], from: f64, to: f64) -> Result<NewtonOutcome> {
        let mut last = Err(Error::contract("no substeps attempted"));
        for pieces in [2usize, 4, 8, 16] {
            let mut u = u0.to_vec();
            let mut prev = from;
            let mut ok = true;
            for s in 1..=pieces {
                let load = from + (to - from) * s as f64 / pieces as f64;
                match self.newton_solve(theta, load, &self.predict(&u, load - prev)) {
                    Ok(o) => {
                        u = o.u.clone();
                        prev = load;
                        if s == pieces {
                            return Ok(o);
                        }
                    }
                    Err(e) => {
                        last = Err(e);
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                break;
            }
        }
        last
    }

    /// `Σ_k c_k dΨ_k/dΘ` with one adjoint solve per load level.
    pub fn energy_vjp(&self, theta: &[f64], path: &HyperPath, cot: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut grad = vec![0.0; self.n_elems()];
        for ((u, &load), &c) in path.u.iter().zip(&path.loads).zip(cot) {
            if c == 0.0 {
                continue;
            }
            for (e, g) in grad.iter_mut().enumerate() {
                *g += c * self.element_energy_unit(&local(&self.mesh, u, e), e)?;
            }
            let step = HyperStep { solid: self, load, full: u };
            let red = self.dofs.gather(u);
            let (r, _) = self.assemble(theta, u, false)?;
            let vu: Vec<f64> = r.iter().map(|v| c * v).collect();
            let ws = AdjointWorkspace::new(&step, &red, theta)?;
            let vt = ws.vjp(&vu)?;
            grad.iter_mut().zip(vt).for_each(|(a, b)| *a += b);
        }
        Ok(grad)
    }

    /// Full displacement vector for a prescribed top displacement with zero interior.
    pub fn boundary_state(&self, load: f64) -> Vec<f64> {
        self.with_load(&vec![0.0; 2 * self.mesh.n_nodes()], load)
    }
}

/// Equilibrium at a fixed load level over the free DOFs.
pub struct HyperStep<'a> {
    pub solid: &'a Hyperelastic,
    pub load: f64,
    pub full: &'a [f64],
}

impl HyperStep<'_> {
    fn expand(&self, u: &[f64]) -> Vec<f64> {
        let mut full = self.solid.with_load(self.full, self.load);
        self.solid.dofs.scatter_into(u, &mut full);
        full
    }
}

impl ResidualProblem for HyperStep<'_> {
    fn n_free(&self) -> usize {
        self.solid.dofs.n_free
    }

    fn n_params(&self) -> usize {
        self.solid.n_elems()
    }

    fn residual(&self, u: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solid.assemble(theta, &self.expand(u), false)?.0)
    }

    fn tangent(&self, u: &[f64], theta: &[f64]) -> Result<Triplets> {
        Ok(self.solid.assemble(theta, &self.expand(u), true)?.1.expect("tangent requested"))
    }

    fn residual_theta_vjp(&self, u: &[f64], _theta: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        let s = self.solid;
        let full = self.expand(u);
        let mut lf = vec![0.0; full.len()];
        s.dofs.scatter_into(lambda, &mut lf);
        (0..s.n_elems())
            .map(|e| {
                let (fe, _) = s.element_unit(&local(&s.mesh, &full, e), e, false)?;
                let le = local(&s.mesh, &lf, e);
                Ok(fe.iter().zip(le).map(|(a, b)| a * b).sum())
            })
            .collect()
    }

    fn residual_tolerance(&self) -> f64 {
        1e-6
    }

    fn residual_scale(&self, theta: &[f64]) -> f64 {
        theta.iter().fold(0.0f64, |m, e| m.max(e.abs())) * self.load.abs().max(1e-3)
    }
}
