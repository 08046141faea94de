//! Polyharmonic spline interpolation and the sparse warp built on it.

mod interp;
mod linalg;
mod warp;

pub(crate) use interp::MultiEval;
pub use interp::{
    eval_interpolant, rbf, solve_interpolant, Point, RbfOrder, SplineInterpolant, SplineSystem,
};
pub use linalg::Lu;
pub use warp::{
    dense_flow, sparse_warp, sparse_warp_backward, ControlPointSet, Displacement, FlowField,
    SiteMode, SparseWarp, WarpConfig,
};
