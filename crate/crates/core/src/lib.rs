//! Reconstruction of piecewise-constant diffusion and absorption
//! coefficients of `-div(a grad u) + c u = 0` from Neumann-to-Dirichlet
//! boundary data, with a level-set parametrization and an adjoint-based
//! iterative update.

pub mod cli_io;
pub mod error;
pub mod fem;
pub mod forward;
pub mod gradient;
pub mod levelset;
pub mod mesh;
pub mod phantoms;
pub mod reconstruct;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
pub use fem::{NodalField, SolverMethod, SolverSettings};
pub use mesh::{build_uniform_mesh, Mesh, Rect, Side};
