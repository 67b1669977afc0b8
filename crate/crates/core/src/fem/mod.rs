//! Finite-element solvers on structured quadrilateral grids.

mod assembly;
pub mod dual;
mod elasticity;
mod hyper;
mod linalg;
mod mesh;
mod plastic;
mod quad;

pub use assembly::{assemble, assemble_full, local, norm2, ElementMatrix, ElementVector};
pub use elasticity::*;
pub use hyper::*;
pub use linalg::{reset_solve_counts, solve_counts, SparseLu, Triplets};
pub use mesh::{DofMap, Mesh};
pub use plastic::*;
pub use quad::{element_dofs, QuadRule};
