//! Finite-difference stencils, boundary handling and PDE residual fields.

pub mod boundary;
pub mod residual;
pub mod stencil;

pub use boundary::{
    apply_hard_constraint, boundary_penalty, pad_ghost, BoundarySpec, ConstraintMode, EdgeCondition, GhostFill,
    Geometry, UnaryOp,
};
pub use residual::{
    crop, darcy_operator, darcy_residual, laplacian, pde_residual, residual_gradient, residual_mask, PdeKind,
    Residual,
};
pub use stencil::{apply_stencil, Derivative, KernelFamily, StencilKernel};
