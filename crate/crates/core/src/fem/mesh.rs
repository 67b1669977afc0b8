use crate::error::{Error, Result};

/// Structured bilinear-quad grid on the unit square.
///
/// Node `(i, j)` sits at `(i/nx, j/ny)` with id `j·(nx+1) + i`; element
/// `(i, j)` has id `j·nx + i` and nodes listed counter-clockwise from its
/// lower-left corner. Row `j = 0` is the bottom of the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub coords: Vec<[f64; 2]>,
    pub elems: Vec<[usize; 4]>,
    /// For periodic meshes, the master node of every node (itself for masters).
    pub master: Option<Vec<usize>>,
}

impl Mesh {
    pub fn grid(nx: usize, ny: usize, periodic: bool) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::contract("mesh needs at least one element per direction"));
        }
        let node = |i: usize, j: usize| j * (nx + 1) + i;
        let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                coords.push([i as f64 / nx as f64, j as f64 / ny as f64]);
            }
        }
        let mut elems = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                elems.push([node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)]);
            }
        }
        let master = periodic.then(|| {
            let mut m = Vec::with_capacity(coords.len());
            for j in 0..=ny {
                for i in 0..=nx {
                    m.push(node(i % nx, j % ny));
                }
            }
            m
        });
        Ok(Self {
            nx,
            ny,
            coords,
            elems,
            master,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elems(&self) -> usize {
        self.elems.len()
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    /// Number of distinct nodes after periodic identification.
    pub fn n_masters(&self) -> usize {
        match &self.master {
            Some(m) => m.iter().enumerate().filter(|(i, &k)| *i == k).count(),
            None => self.n_nodes(),
        }
    }

    pub fn bottom_nodes(&self) -> Vec<usize> {
        (0..=self.nx).map(|i| self.node(i, 0)).collect()
    }

    pub fn top_nodes(&self) -> Vec<usize> {
        (0..=self.nx).map(|i| self.node(i, self.ny)).collect()
    }

    /// Element under image pixel `(row, col)`; image row 0 is the top row.
    pub fn element_of_pixel(&self, row: usize, col: usize) -> usize {
        (self.ny - 1 - row) * self.nx + col
    }

    /// Reorders a row-major image (`ny × nx`, top row first) into element order.
    pub fn image_to_elements(&self, img: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_elems()];
        for r in 0..self.ny {
            for c in 0..self.nx {
                out[self.element_of_pixel(r, c)] = img[r * self.nx + c];
            }
        }
        out
    }

    /// Inverse of [`Mesh::image_to_elements`].
    pub fn elements_to_image(&self, field: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_elems()];
        for r in 0..self.ny {
            for c in 0..self.nx {
                out[r * self.nx + c] = field[self.element_of_pixel(r, c)];
            }
        }
        out
    }
}

/// Maps full DOFs (`2·node + component`) to reduced unknowns. `None` marks a
/// prescribed DOF; periodic slaves share their master's index.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub map: Vec<Option<usize>>,
    pub n_free: usize,
}

impl DofMap {
    /// Every DOF free except those in `fixed`.
    pub fn dirichlet(n_dofs: usize, fixed: &[usize]) -> Self {
        let mut is_fixed = vec![false; n_dofs];
        for &d in fixed {
            is_fixed[d] = true;
        }
        let mut map = Vec::with_capacity(n_dofs);
        let mut k = 0;
        for f in is_fixed {
            if f {
                map.push(None);
            } else {
                map.push(Some(k));
                k += 1;
            }
        }
        Self { map, n_free: k }
    }

    /// Periodic fluctuation DOFs with master node 0 pinned.
    pub fn periodic(mesh: &Mesh) -> Result<Self> {
        let master = mesh
            .master
            .as_ref()
            .ok_or_else(|| Error::contract("periodic DOF map needs a periodic mesh"))?;
        let mut index = vec![None; mesh.n_nodes()];
        let mut k = 0;
        for (n, &m) in master.iter().enumerate() {
            if n == m && n != 0 {
                index[n] = Some(k);
                k += 2;
            }
        }
        let mut map = Vec::with_capacity(2 * mesh.n_nodes());
        for &m in master {
            let base = index[m];
            map.push(base);
            map.push(base.map(|b| b + 1));
        }
        Ok(Self { map, n_free: k })
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (d, m) in self.map.iter().enumerate() {
            if let Some(k) = m {
                out[*k] = full[d];
            }
        }
        out
    }

    /// Writes reduced values into a full vector, leaving prescribed entries.
    pub fn scatter_into(&self, reduced: &[f64], full: &mut [f64]) {
        for (d, m) in self.map.iter().enumerate() {
            if let Some(k) = m {
                full[d] = reduced[*k];
            }
        }
    }

    /// Sums full-length contributions onto reduced unknowns.
    pub fn reduce(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (d, m) in self.map.iter().enumerate() {
            if let Some(k) = m {
                out[*k] += full[d];
            }
        }
        out
    }
}
