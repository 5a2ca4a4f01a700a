//! Grids, Levy quadrature, interpolation and the discrete operators.

mod field;
mod grid;
mod interp;
mod levy;
mod operators;

pub use field::ValueField;
pub use grid::{SpatialGrid, TimeGrid, MAX_DIM};
pub use interp::{growth_offset, interp_stencil, interpolate, interpolate_surface, InterpStencil};
pub use levy::{build_levy_quadrature, LevyQuadrature, MIN_ATOM_WEIGHT};
pub use operators::{diffusion_diagonal, NonlocalSplit, Operators};
