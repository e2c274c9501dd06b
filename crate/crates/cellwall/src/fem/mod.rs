//! Finite element building blocks: sparse matrices, constrained solves, and
//! element kernels.

pub mod hex;
pub mod solve;
pub mod sparse;

pub use solve::{enforce_functionals, solve_spd, Precond};
pub use sparse::{apply_constraints, CsrMatrix, DofMap};
