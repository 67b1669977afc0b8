use super::linalg::{SparseLu, Triplets};
use super::mesh::{DofMap, Mesh};
use super::quad::{element_dofs, QuadRule};
use crate::adjoint::{solver_vjp, ResidualProblem};
use crate::error::{Error, Result};

/// 2D reduction of isotropic elasticity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaneModel {
    Stress,
    Strain,
}

/// Voigt (11, 22, 12) stiffness with engineering shear strain.
pub fn elastic_matrix(e: f64, nu: f64, model: PlaneModel) -> [[f64; 3]; 3] {
    match model {
        PlaneModel::Stress => {
            let c = e / (1.0 - nu * nu);
            [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]]
        }
        PlaneModel::Strain => {
            let c = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
            [
                [c * (1.0 - nu), c * nu, 0.0],
                [c * nu, c * (1.0 - nu), 0.0],
                [0.0, 0.0, c * (1.0 - 2.0 * nu) / 2.0],
            ]
        }
    }
}

pub(crate) fn matvec3(a: &[[f64; 3]; 3], x: &[f64; 3]) -> [f64; 3] {
    [
        a[0][0] * x[0] + a[0][1] * x[1] + a[0][2] * x[2],
        a[1][0] * x[0] + a[1][1] * x[1] + a[1][2] * x[2],
        a[2][0] * x[0] + a[2][1] * x[1] + a[2][2] * x[2],
    ]
}

const UNIT_STRAINS: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Periodic unit-cell problem with per-element Young's modulus and a shared
/// Poisson ratio.
#[derive(Clone, Debug)]
pub struct Homogenization {
    pub mesh: Mesh,
    pub nu: f64,
    pub model: PlaneModel,
    dofs: DofMap,
    quad: QuadRule,
    k_unit: [[f64; 8]; 8],
    c_unit: [[f64; 3]; 3],
    f_unit: [[f64; 8]; 3],
}

#[derive(Clone, Debug)]
pub struct HomogenizationResult {
    /// Column `j` is the averaged stress for unit macroscopic strain `j`.
    pub c_hom: [[f64; 3]; 3],
    /// Full-length fluctuation field per load case.
    pub fluctuations: Vec<Vec<f64>>,
    reduced: Vec<Vec<f64>>,
}

impl Homogenization {
    pub fn new(nx: usize, ny: usize, nu: f64, model: PlaneModel) -> Result<Self> {
        let mesh = Mesh::grid(nx, ny, true)?;
        let dofs = DofMap::periodic(&mesh)?;
        let quad = QuadRule::new(mesh.hx(), mesh.hy());
        let c_unit = elastic_matrix(1.0, nu, model);
        let mut k_unit = [[0.0; 8]; 8];
        for g in 0..4 {
            quad.add_btdb(g, &c_unit, quad.weight, &mut k_unit);
        }
        let mut f_unit = [[0.0; 8]; 3];
        for (case, eps) in UNIT_STRAINS.iter().enumerate() {
            let s = matvec3(&c_unit, eps);
            for g in 0..4 {
                quad.add_bt(g, &s, quad.weight, &mut f_unit[case]);
            }
        }
        Ok(Self {
            mesh,
            nu,
            model,
            dofs,
            quad,
            k_unit,
            c_unit,
            f_unit,
        })
    }

    pub fn n_elems(&self) -> usize {
        self.mesh.n_elems()
    }

    pub fn n_free(&self) -> usize {
        self.dofs.n_free
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_elems() {
            return Err(Error::Shape {
                op: "homogenize".into(),
                expected: vec![self.n_elems()],
                got: vec![theta.len()],
            });
        }
        if theta.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("element moduli".into()));
        }
        Ok(())
    }

    fn local(&self, full: &[f64], e: usize) -> [f64; 8] {
        let d = element_dofs(&self.mesh.elems[e]);
        d.map(|i| full[i])
    }

    fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; 2 * self.mesh.n_nodes()];
        self.dofs.scatter_into(reduced, &mut full);
        full
    }

    fn stiffness(&self, theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(self.dofs.n_free);
        for (e, nodes) in self.mesh.elems.iter().enumerate() {
            let d = element_dofs(nodes);
            for r in 0..8 {
                let Some(i) = self.dofs.map[d[r]] else { continue };
                for c in 0..8 {
                    if let Some(j) = self.dofs.map[d[c]] {
                        t.push(i, j, theta[e] * self.k_unit[r][c]);
                    }
                }
            }
        }
        t
    }

    fn load(&self, theta: &[f64], case: usize) -> Vec<f64> {
        let mut full = vec![0.0; 2 * self.mesh.n_nodes()];
        for (e, nodes) in self.mesh.elems.iter().enumerate() {
            for (k, &d) in element_dofs(nodes).iter().enumerate() {
                full[d] -= theta[e] * self.f_unit[case][k];
            }
        }
        self.dofs.reduce(&full)
    }

    /// Averaged stress for load case `case` and reduced fluctuation `u`.
    pub fn averaged_stress(&self, theta: &[f64], case: usize, u: &[f64]) -> [f64; 3] {
        let full = self.expand(u);
        let mut s = [0.0; 3];
        for e in 0..self.n_elems() {
            let ue = self.local(&full, e);
            for g in 0..4 {
                let mut eps = self.quad.strain(g, &ue);
                for (a, b) in eps.iter_mut().zip(UNIT_STRAINS[case]) {
                    *a += b;
                }
                let sig = matvec3(&self.c_unit, &eps);
                for k in 0..3 {
                    s[k] += theta[e] * self.quad.weight * sig[k];
                }
            }
        }
        s
    }

    pub fn homogenize(&self, theta: &[f64]) -> Result<HomogenizationResult> {
        self.check_theta(theta)?;
        let lu = SparseLu::factor(&self.stiffness(theta))?;
        let mut c_hom = [[0.0; 3]; 3];
        let mut reduced = Vec::with_capacity(3);
        let mut fluctuations = Vec::with_capacity(3);
        for case in 0..3 {
            let u = lu.solve(&self.load(theta, case))?;
            let s = self.averaged_stress(theta, case, &u);
            for i in 0..3 {
                c_hom[i][case] = s[i];
            }
            fluctuations.push(self.expand(&u));
            reduced.push(u);
        }
        Ok(HomogenizationResult {
            c_hom,
            fluctuations,
            reduced,
        })
    }

    /// `∂⟨cot, C_hom⟩/∂Θ` through one adjoint solve per load case.
    pub fn homogenize_vjp(
        &self,
        theta: &[f64],
        result: &HomogenizationResult,
        cot: &[[f64; 3]; 3],
    ) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut grad = vec![0.0; self.n_elems()];
        for case in 0..3 {
            let g = [cot[0][case], cot[1][case], cot[2][case]];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let u = &result.reduced[case];
            let full = self.expand(u);
            let cg = matvec3(&self.c_unit, &g);
            let mut vu_full = vec![0.0; full.len()];
            for (e, nodes) in self.mesh.elems.iter().enumerate() {
                let ue = self.local(&full, e);
                let mut fe = [0.0; 8];
                for q in 0..4 {
                    let mut eps = self.quad.strain(q, &ue);
                    for (a, b) in eps.iter_mut().zip(UNIT_STRAINS[case]) {
                        *a += b;
                    }
                    grad[e] += self.quad.weight * cg.iter().zip(&eps).map(|(a, b)| a * b).sum::<f64>();
                    self.quad.add_bt(q, &cg, self.quad.weight * theta[e], &mut fe);
                }
                for (k, &d) in element_dofs(nodes).iter().enumerate() {
                    vu_full[d] += fe[k];
                }
            }
            let vu = self.dofs.reduce(&vu_full);
            let case_problem = HomogenizationCase { cell: self, case };
            let vt = solver_vjp(&case_problem, u, theta, &vu)?;
            for (a, b) in grad.iter_mut().zip(vt) {
                *a += b;
            }
        }
        Ok(grad)
    }
}

/// One macroscopic load case as an equilibrium residual `K(Θ)ũ − f(Θ)`.
pub struct HomogenizationCase<'a> {
    pub cell: &'a Homogenization,
    pub case: usize,
}

impl ResidualProblem for HomogenizationCase<'_> {
    fn n_free(&self) -> usize {
        self.cell.dofs.n_free
    }

    fn n_params(&self) -> usize {
        self.cell.n_elems()
    }

    fn residual(&self, u: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let k = self.cell.stiffness(theta);
        let f = self.cell.load(theta, self.case);
        Ok(k.matvec(u).iter().zip(f).map(|(a, b)| a - b).collect())
    }

    fn tangent(&self, _u: &[f64], theta: &[f64]) -> Result<Triplets> {
        Ok(self.cell.stiffness(theta))
    }

    fn residual_theta_vjp(&self, u: &[f64], _theta: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        let c = self.cell;
        let uf = c.expand(u);
        let lf = c.expand(lambda);
        Ok((0..c.n_elems())
            .map(|e| {
                let ue = c.local(&uf, e);
                let le = c.local(&lf, e);
                (0..8)
                    .map(|r| {
                        let ku: f64 = (0..8).map(|k| c.k_unit[r][k] * ue[k]).sum();
                        le[r] * (ku + c.f_unit[self.case][r])
                    })
                    .sum()
            })
            .collect())
    }

    fn residual_scale(&self, theta: &[f64]) -> f64 {
        theta.iter().fold(0.0f64, |m, e| m.max(e.abs())) * self.cell.quad.area
    }
}
