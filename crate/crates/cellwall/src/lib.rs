//! Homogenized chemo-mechanical model of a fibril-reinforced material:
//! periodic unit-cell solves for effective diffusion/elasticity tensors,
//! and a coupled macroscopic reaction-diffusion-elasticity time stepper.

pub mod cell_homog;
pub mod chemistry;
pub mod config;
pub mod coupling;
pub mod error;
pub mod fem;
pub mod io;
pub mod macro_solver;
pub mod materials;
pub mod mesh;
pub mod pipeline;
pub mod tensor;
pub mod validate;

pub use error::CellwallError;
