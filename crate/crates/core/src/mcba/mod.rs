//! Multi-camera bundle adjustment.
//!
//! The problem couples body poses (one free 6-dof block per non-gauge
//! keyframe) with per-pixel inverse depths shared across every edge that
//! observes the same source pixel. Temporal edges tie consecutive keyframes
//! of one camera together; cross-view edges tie rig cameras of a single
//! keyframe together through the fixed extrinsics and therefore constrain
//! depth and calibration consistency without touching the poses.
//!
//! Solving proceeds by damped Gauss-Newton with a Schur complement over the
//! depth variables, which keeps the dense factorization at `6k x 6k` for `k`
//! free poses no matter how many depths the problem carries.

pub mod linearize;
pub mod optimize;
pub mod problem;
pub mod residual;
pub mod schur;

pub use linearize::{linearize, NormalEquations};
pub use optimize::{mcba_optimize, McbaConfig, McbaReport};
pub use problem::{BaProblem, DepthBlock, ResolvedEdge, ResolvedSample, INV_DEPTH_MAX, INV_DEPTH_MIN};
pub use residual::{problem_cost, sample_residual, EdgeGeometry, SampleResidual};
pub use schur::{schur_solve, SchurSolution};
