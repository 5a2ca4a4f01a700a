//! Monotone finite-difference solvers for systems of non-local variational
//! inequalities with interconnected bilateral obstacles, as they arise in
//! zero-sum switching games driven by jump-diffusions.
//!
//! The crate is organised bottom-up:
//!
//! - [`expr`]: the coefficient expression language,
//! - [`model`]: problem instances, obstacles and assumption validators,
//! - [`discretization`]: grids, Levy quadrature and discrete operators,
//! - [`solver`]: penalized, reflected and bilateral backward solvers,
//! - [`mc`]: jump-diffusion simulation and regression BSDE estimates,
//! - [`oracle`]: an independent dense backward-induction solver.

// NaN-rejecting `!(a <= b)` checks and index loops over stencils are deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod discretization;
pub mod error;
pub mod exec;
pub mod expr;
pub mod mc;
pub mod model;
pub mod oracle;
pub mod solver;

pub use error::{Error, Result};
pub use exec::Exec;
