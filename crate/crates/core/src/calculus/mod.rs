//! Finite-difference calculus on tensor-product grids and the residuals of
//! the continuity, momentum and straightness balance equations.

mod grid;
mod ops;
mod residual;
mod tabulate;

pub use grid::{Axis, GridField, Rank, SpatialGrid, Stencil};
pub use ops::{
    add, advect, grid_divergence, grid_divergence_matrix, grid_gradient, lin_comb, mat_vec,
    scale_by, sub, with_grid,
};
pub use residual::{
    balance_residual, continuity_residual, convergence_check, material_derivative,
    material_report, momentum_residual, time_derivative, ConvergenceCheck, ResidualNorms,
    ResidualReport, TimeScheme, TimeStack, CONVERGENCE_RATIO, REFERENCE_FLOOR, ROUNDOFF_RELATIVE,
};
pub use tabulate::{
    empirical_box, estimated_fields, estimated_slice_fields, oracle_box, oracle_fields,
    sample_stack, FieldSet, SliceFields,
};
