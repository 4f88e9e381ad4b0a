//! Joint depth-scale alignment: per-keyframe bilinear scale grids that
//! absorb the low-frequency bias of depth priors, optimized alternately with
//! the inverse depths while poses stay fixed.

mod grid;
mod solve;

pub use grid::{GridSupport, ScaleGrid};
pub use solve::{
    jdsa_cost, jdsa_solve, JdsaConfig, JdsaProblem, JdsaReport, GRID_MAX, GRID_MIN,
};
