//! Differentiable Gaussian-splat rasterization.
//!
//! Splats project to elliptical footprints and composite front to back into
//! color, depth (via analytic ray-ellipsoid intersection), normal, and
//! coverage buffers. A multi-term loss compares renders against keyframe
//! targets, and a hand-derived backward pass produces gradients for every
//! Gaussian parameter, the body pose, and the exposure transform, feeding a
//! guarded Adam optimizer.

pub mod backward;
pub mod forward;
pub mod loss;
pub mod optimize;
pub mod project;

pub use backward::{loss_backward, GaussGrad, ViewGradients};
pub use forward::{render, render_reference, Contributor, RenderConfig, RenderOutput, View};
pub use loss::{
    apply_exposure, identity_exposure, map_loss, visible_set, LossBreakdown, LossWeights,
    RenderTargets,
};
pub use optimize::{optimize_map, OptimizeConfig, OptimizeReport, OptimizeView};
pub use project::{project_gaussian, ray_ellipsoid_depth, ProjectedGaussian};
