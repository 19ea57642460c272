//! Identification of a discontinuous diffusion coefficient q in
//! `−∇·(q∇u) = f` on the unit square from noisy observations of ∇u.
//!
//! The total-variation regularized model is split by ADMM into a smooth
//! box-constrained coefficient subproblem, solved by an active-set Newton
//! method whose linear systems are reduced to a single SPD Schur complement,
//! and a TV proximal (denoising) subproblem.

pub mod assembly;
pub mod bridge;
pub mod check;
pub mod cli;
pub mod config;
pub mod driver;
pub mod error;
pub mod io;
pub mod linsolve;
pub mod mesh;
pub mod problems;
pub mod psolver;
pub mod qsolver;
pub mod sparse;
pub mod timing;

pub use error::{Error, Result};
