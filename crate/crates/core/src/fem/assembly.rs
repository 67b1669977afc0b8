use rayon::prelude::*;

use super::linalg::Triplets;
use super::mesh::{DofMap, Mesh};
use super::quad::element_dofs;
use crate::error::Result;

pub type ElementVector = [f64; 8];
pub type ElementMatrix = [[f64; 8]; 8];

/// Evaluates `kernel` on every element in parallel, then reduces the element
/// vectors onto the reduced DOFs in fixed element order. Element matrices
/// are assembled when `with_tangent`.
pub fn assemble<F>(mesh: &Mesh, dofs: &DofMap, with_tangent: bool, kernel: F) -> Result<(Vec<f64>, Option<Triplets>)>
where
    F: Fn(usize) -> Result<(ElementVector, Option<ElementMatrix>)> + Sync,
{
    let parts: Vec<Result<(ElementVector, Option<ElementMatrix>)>> =
        (0..mesh.n_elems()).into_par_iter().map(&kernel).collect();
    let mut r = vec![0.0; dofs.n_free];
    let mut t = with_tangent.then(|| Triplets::new(dofs.n_free));
    for (e, part) in parts.into_iter().enumerate() {
        let (fe, ke) = part?;
        let d = element_dofs(&mesh.elems[e]);
        for a in 0..8 {
            let Some(i) = dofs.map[d[a]] else { continue };
            r[i] += fe[a];
            if let (Some(t), Some(ke)) = (t.as_mut(), ke.as_ref()) {
                for b in 0..8 {
                    if let Some(j) = dofs.map[d[b]] {
                        t.push(i, j, ke[a][b]);
                    }
                }
            }
        }
    }
    Ok((r, t))
}

/// Sums element vectors into a full-length vector (all DOFs).
pub fn assemble_full(mesh: &Mesh, parts: &[ElementVector]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * mesh.n_nodes()];
    for (e, fe) in parts.iter().enumerate() {
        for (k, &d) in element_dofs(&mesh.elems[e]).iter().enumerate() {
            out[d] += fe[k];
        }
    }
    out
}

pub fn local(mesh: &Mesh, full: &[f64], e: usize) -> ElementVector {
    element_dofs(&mesh.elems[e]).map(|i| full[i])
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
