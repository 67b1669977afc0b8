use std::cell::Cell;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{MatMut, Par};

use crate::error::{Error, Result};

thread_local! {
    static SOLVES: Cell<usize> = const { Cell::new(0) };
    static TRANSPOSE_SOLVES: Cell<usize> = const { Cell::new(0) };
}

/// Forward and transposed solve counts on this thread.
pub fn solve_counts() -> (usize, usize) {
    (SOLVES.with(Cell::get), TRANSPOSE_SOLVES.with(Cell::get))
}

pub fn reset_solve_counts() {
    SOLVES.with(|c| c.set(0));
    TRANSPOSE_SOLVES.with(|c| c.set(0));
}

/// Square sparse matrix in coordinate form; duplicates are summed.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self { n, entries: vec![] }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        self.entries.push((i, j, v));
    }

    /// Sorted, duplicate-free entries in column-major order.
    pub fn compressed(&self) -> Vec<(usize, usize, f64)> {
        let mut e = self.entries.clone();
        e.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(e.len());
        for (i, j, v) in e {
            match out.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => out.push((i, j, v)),
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[j] += v * x[i];
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for &(i, j, v) in &self.entries {
            d[i][j] += v;
        }
        d
    }
}

/// Sparse LU factorization of a square matrix.
pub struct SparseLu {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn factor(a: &Triplets) -> Result<Self> {
        faer::set_global_parallelism(Par::Seq);
        if a.n == 0 {
            return Err(Error::Solver("empty system".into()));
        }
        let trip: Vec<Triplet<usize, usize, f64>> = a
            .compressed()
            .into_iter()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(a.n, a.n, &trip)
            .map_err(|e| Error::Solver(format!("matrix assembly: {e:?}")))?;
        let lu = m
            .sp_lu()
            .map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { lu, n: a.n })
    }

    fn run(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::Shape {
                op: "sparse solve".into(),
                expected: vec![self.n],
                got: vec![b.len()],
            });
        }
        let mut x = b.to_vec();
        {
            let rhs = MatMut::from_column_major_slice_mut(&mut x, self.n, 1);
            if transpose {
                self.lu.solve_transpose_in_place(rhs);
            } else {
                self.lu.solve_in_place(rhs);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("singular system (non-finite solution)".into()));
        }
        Ok(x)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        SOLVES.with(|c| c.set(c.get() + 1));
        self.run(b, false)
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        TRANSPOSE_SOLVES.with(|c| c.set(c.get() + 1));
        self.run(b, true)
    }
}
