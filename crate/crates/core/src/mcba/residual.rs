//! Residual and cost evaluation for the bundle adjustment problem.
//!
//! Each correspondence contributes a 2-vector image residual
//! `r = target - project_j(T_hat * backproject_i(src, d))` where `T_hat` is
//! the pair transform of the owning edge and `d` the shared inverse depth of
//! the source pixel. Invalid reprojections (behind the camera or outside the
//! target image) contribute nothing to the cost by definition, so a point
//! that wanders off-screen during optimization simply drops out instead of
//! pulling the solution toward the image border.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{pair_transform, Se3};
use crate::mcba::problem::BaProblem;

/// One evaluated correspondence term.
#[derive(Debug, Clone, Copy)]
pub struct SampleResidual {
    /// `target - projection`, in pixels. Zero when `valid` is false.
    pub residual: Vector2<f64>,
    /// Whether the reprojection landed in front of the target camera and
    /// inside the image bounds.
    pub valid: bool,
}

/// Per-edge cached quantities shared by cost evaluation and linearization.
#[derive(Debug, Clone)]
pub struct EdgeGeometry {
    /// Pair transform mapping source-camera points into the target camera.
    pub t_hat: Se3,
    /// `ext_j^-1 * T_j^-1`, the map from world points into the target
    /// camera. Only meaningful when `pose_dependent` is true; cross-view
    /// edges never touch the body poses.
    pub world_to_target: Se3,
    /// True for temporal edges, whose residuals depend on the body poses.
    pub pose_dependent: bool,
}

/// Resolves the transforms of edge `edge_idx` against the current pose
/// estimates.
pub fn edge_geometry(problem: &BaProblem, edge_idx: usize) -> Result<EdgeGeometry> {
    let edge = &problem.edges[edge_idx];
    let key = &edge.key;
    let pose_i = &problem.poses[key.kf_i];
    let pose_j = &problem.poses[key.kf_j];
    let t_hat = pair_transform(key.kind, pose_i, pose_j, &problem.rig, key.cam_i, key.cam_j)?;
    let pose_dependent = matches!(key.kind, crate::geometry::PairKind::Temporal);
    let world_to_target = if pose_dependent {
        let ext_j = &problem.rig.camera(key.cam_j)?.cam_to_body;
        ext_j.inverse().compose(&pose_j.inverse())
    } else {
        Se3::identity()
    };
    Ok(EdgeGeometry { t_hat, world_to_target, pose_dependent })
}

/// Evaluates the residual of sample `sample_idx` on edge `edge_idx`.
pub fn sample_residual(
    problem: &BaProblem,
    geom: &EdgeGeometry,
    edge_idx: usize,
    sample_idx: usize,
) -> Result<SampleResidual> {
    let edge = &problem.edges[edge_idx];
    let key = &edge.key;
    let sample = &edge.samples[sample_idx];
    let intr_i = &problem.rig.camera(key.cam_i)?.intrinsics;
    let intr_j = &problem.rig.camera(key.cam_j)?.intrinsics;

    let d = problem.depths[sample.depth_var];
    // Depths are clamped positive at build time, so this only fails if a
    // caller mutated the depth vector by hand; treat that as a dropout.
    let point_i = match intr_i.backproject(&sample.src_px, d) {
        Ok(p) => p,
        Err(_) => {
            return Ok(SampleResidual { residual: Vector2::zeros(), valid: false });
        }
    };
    let point_j = geom.t_hat.transform(&point_i);
    let proj = intr_j.project(&point_j);
    if !proj.valid {
        return Ok(SampleResidual { residual: Vector2::zeros(), valid: false });
    }
    let residual = sample.target_px - proj.pixel;
    if !residual.x.is_finite() || !residual.y.is_finite() {
        return Err(Error::Linearization {
            edge: key.to_string(),
            msg: format!("non-finite residual at sample {sample_idx}"),
        });
    }
    Ok(SampleResidual { residual, valid: true })
}

/// Squared weighted magnitude of one residual: `wx*rx^2 + wy*ry^2`.
pub fn weighted_square(residual: &Vector2<f64>, weight: &Vector2<f64>) -> f64 {
    weight.x * residual.x * residual.x + weight.y * residual.y * residual.y
}

/// Cost contribution of one residual, optionally passed through a Huber
/// robustifier with threshold `delta` on the weighted magnitude.
pub fn sample_cost(residual: &Vector2<f64>, weight: &Vector2<f64>, huber: Option<f64>) -> f64 {
    let sq = weighted_square(residual, weight);
    match huber {
        None => sq,
        Some(delta) => {
            let mag = sq.sqrt();
            if mag <= delta {
                sq
            } else {
                2.0 * delta * mag - delta * delta
            }
        }
    }
}

/// IRLS multiplier applied to the per-axis weights during linearization so
/// that the Gauss-Newton step minimizes the robustified cost. Unity inside
/// the Huber region (and always, when no robustifier is configured).
pub fn robust_multiplier(residual: &Vector2<f64>, weight: &Vector2<f64>, huber: Option<f64>) -> f64 {
    match huber {
        None => 1.0,
        Some(delta) => {
            let mag = weighted_square(residual, weight).sqrt();
            if mag <= delta {
                1.0
            } else {
                delta / mag
            }
        }
    }
}

/// Total cost of the problem at its current pose and depth estimates.
pub fn problem_cost(problem: &BaProblem, huber: Option<f64>) -> Result<f64> {
    let mut total = 0.0;
    for edge_idx in 0..problem.edges.len() {
        let geom = edge_geometry(problem, edge_idx)?;
        let edge = &problem.edges[edge_idx];
        for sample_idx in 0..edge.samples.len() {
            let eval = sample_residual(problem, &geom, edge_idx, sample_idx)?;
            if !eval.valid {
                continue;
            }
            let weight = edge.samples[sample_idx].weight;
            total += sample_cost(&eval.residual, &weight, huber);
        }
    }
    Ok(total)
}
