//! Boundary integral operators for the free Dirac operator `H(μ) = α·D + μβ`
//! on smooth closed surfaces in R³.
//!
//! The crate discretizes the Dirac layer potential with a Nyström scheme on
//! tensor-product grids, builds the boundary singular operator `C_s`, the
//! Calderón projectors and the anticommutator `{α·n, C_s}`, and checks the
//! MIT-bag and δ-shell boundary algebra against refinement studies.

pub mod algebra;
pub mod calderon;
mod error;
pub mod experiment;
pub mod kernels;
pub mod layerpot;
pub mod models;
pub mod surface;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
