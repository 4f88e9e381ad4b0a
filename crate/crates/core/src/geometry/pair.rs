//! Relative transforms between rig cameras across keyframes.
//!
//! Frame conventions used throughout the crate:
//!
//! * body poses `T_t` map body-frame points into the world frame,
//! * rig extrinsics `T_CB` map camera-frame points into the body frame.
//!
//! Under these conventions the transform taking a point observed by camera
//! `ci` at keyframe `i` into the frame of camera `cj` at keyframe `j` is
//!
//! ```text
//! T_ij = T_CjB^-1 * T_j^-1 * T_i * T_CiB
//! ```
//!
//! Temporal edges fix `ci == cj` and keep the full chain. Cross-view edges fix
//! `i == j`, where the body poses cancel algebraically; the implementation
//! drops them outright so the result is bitwise identical for any pose, which
//! is what makes cross-view residuals pose-gradient-free in the solver.

use crate::error::{Error, Result};
use crate::geometry::{CamId, Rig, Se3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairKind {
    /// Same camera, two different keyframes.
    Temporal,
    /// Two cameras of the rig at the same keyframe.
    CrossView,
}

/// Relative transform for one factor-graph edge, source camera frame to
/// target camera frame.
pub fn pair_transform(
    kind: PairKind,
    pose_i: &Se3,
    pose_j: &Se3,
    rig: &Rig,
    cam_i: CamId,
    cam_j: CamId,
) -> Result<Se3> {
    let ext_i = rig.camera(cam_i)?.cam_to_body;
    let ext_j = rig.camera(cam_j)?.cam_to_body;
    match kind {
        PairKind::Temporal => {
            if cam_i != cam_j {
                return Err(Error::invalid(format!(
                    "temporal edge must stay on one camera, got {cam_i} -> {cam_j}"
                )));
            }
            Ok(ext_j
                .inverse()
                .compose(&pose_j.inverse())
                .compose(pose_i)
                .compose(&ext_i))
        }
        // Poses cancel; never touch them so the output is pose-independent
        // down to the last bit.
        PairKind::CrossView => Ok(ext_j.inverse().compose(&ext_i)),
    }
}
