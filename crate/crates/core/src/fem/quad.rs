//! 2×2 Gauss quadrature on axis-aligned bilinear quads.

/// Shape-function gradients at the four Gauss points of an `hx × hy` element.
#[derive(Clone, Debug)]
pub struct QuadRule {
    /// `grads[g][a] = (∂N_a/∂x, ∂N_a/∂y)` at Gauss point `g`.
    pub grads: [[[f64; 2]; 4]; 4],
    /// Quadrature weight times Jacobian determinant (identical for all points).
    pub weight: f64,
    pub area: f64,
}

const NODE_SIGNS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

impl QuadRule {
    pub fn new(hx: f64, hy: f64) -> Self {
        let g = 1.0 / 3f64.sqrt();
        let mut grads = [[[0.0; 2]; 4]; 4];
        for (gi, gp) in NODE_SIGNS.iter().enumerate() {
            let (xi, eta) = (gp[0] * g, gp[1] * g);
            for (a, s) in NODE_SIGNS.iter().enumerate() {
                let dxi = 0.25 * s[0] * (1.0 + s[1] * eta);
                let deta = 0.25 * s[1] * (1.0 + s[0] * xi);
                grads[gi][a] = [dxi * 2.0 / hx, deta * 2.0 / hy];
            }
        }
        Self {
            grads,
            weight: 0.25 * hx * hy,
            area: hx * hy,
        }
    }

    /// Voigt strain (xx, yy, 2xy) at Gauss point `g` of element displacements
    /// `[ux0, uy0, ux1, uy1, …]`.
    pub fn strain(&self, g: usize, ue: &[f64; 8]) -> [f64; 3] {
        let mut e = [0.0; 3];
        for (a, d) in self.grads[g].iter().enumerate() {
            let (ux, uy) = (ue[2 * a], ue[2 * a + 1]);
            e[0] += d[0] * ux;
            e[1] += d[1] * uy;
            e[2] += d[1] * ux + d[0] * uy;
        }
        e
    }

    /// Adds `w · Bᵀ s` (Voigt stress `s`) at Gauss point `g` into `fe`.
    pub fn add_bt(&self, g: usize, s: &[f64; 3], w: f64, fe: &mut [f64; 8]) {
        for (a, d) in self.grads[g].iter().enumerate() {
            fe[2 * a] += w * (d[0] * s[0] + d[1] * s[2]);
            fe[2 * a + 1] += w * (d[1] * s[1] + d[0] * s[2]);
        }
    }

    /// `B` at Gauss point `g` as a 3×8 matrix.
    pub fn b_matrix(&self, g: usize) -> [[f64; 8]; 3] {
        let mut b = [[0.0; 8]; 3];
        for (a, d) in self.grads[g].iter().enumerate() {
            b[0][2 * a] = d[0];
            b[1][2 * a + 1] = d[1];
            b[2][2 * a] = d[1];
            b[2][2 * a + 1] = d[0];
        }
        b
    }

    /// `w · Bᵀ D B` for a 3×3 material matrix `D`.
    pub fn add_btdb(&self, g: usize, d: &[[f64; 3]; 3], w: f64, ke: &mut [[f64; 8]; 8]) {
        let b = self.b_matrix(g);
        let mut db = [[0.0; 8]; 3];
        for i in 0..3 {
            for k in 0..8 {
                db[i][k] = (0..3).map(|j| d[i][j] * b[j][k]).sum();
            }
        }
        for r in 0..8 {
            for c in 0..8 {
                ke[r][c] += w * (0..3).map(|i| b[i][r] * db[i][c]).sum::<f64>();
            }
        }
    }
}

/// Element DOF indices in the full vector.
pub fn element_dofs(nodes: &[usize; 4]) -> [usize; 8] {
    let mut d = [0; 8];
    for (a, &n) in nodes.iter().enumerate() {
        d[2 * a] = 2 * n;
        d[2 * a + 1] = 2 * n + 1;
    }
    d
}
