//! Covisibility graph over keyframes.
//!
//! Temporal edges connect the same camera across keyframes within an index
//! window, directed from the older to the newer keyframe. Cross-view edges
//! connect distinct rig cameras at the same keyframe whenever enough of the
//! source view reprojects into the target view.

use crate::geometry::{pair_transform, CamId, PairKind, Rig};
use crate::synth::sequence::Frame;
use serde::{Deserialize, Serialize};

/// One directed factor-graph edge. `kf_*` index the promoted keyframe list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub kf_i: usize,
    pub cam_i: CamId,
    pub kf_j: usize,
    pub cam_j: CamId,
    pub kind: PairKind,
}

impl std::fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}/{} -> {}/{}, {:?})",
            self.kf_i, self.cam_i, self.kf_j, self.cam_j, self.kind
        )
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CovisibilityGraph {
    pub n_keyframes: usize,
    pub edges: Vec<EdgeKey>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphParams {
    /// Maximum keyframe index distance for temporal edges.
    pub window: usize,
    /// Minimum fraction of sampled source pixels that must land inside the
    /// target view for a cross-view edge.
    pub overlap_min: f64,
    /// Pixel stride of the overlap probe.
    pub stride: u32,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            window: 2,
            overlap_min: 0.05,
            stride: 4,
        }
    }
}

/// Fraction of strided source pixels (with their exact depth) that reproject
/// inside the target camera at the same keyframe.
pub fn cross_view_overlap(
    frame: &Frame,
    rig: &Rig,
    cam_i_idx: usize,
    cam_j_idx: usize,
    stride: u32,
) -> f64 {
    let cam_i = &rig.cameras()[cam_i_idx];
    let cam_j = &rig.cameras()[cam_j_idx];
    let t = pair_transform(
        PairKind::CrossView,
        &frame.pose,
        &frame.pose,
        rig,
        cam_i.id,
        cam_j.id,
    )
    .expect("rig camera ids valid");
    let depth = &frame.cams[cam_i_idx].depth;
    let mut inside = 0usize;
    let mut total = 0usize;
    let mut y = stride / 2;
    while y < depth.height() {
        let mut x = stride / 2;
        while x < depth.width() {
            let z = depth.get(x, y, 0) as f64;
            if z > 0.0 {
                total += 1;
                let p = cam_i
                    .intrinsics
                    .backproject(&nalgebra::Vector2::new(x as f64, y as f64), 1.0 / z)
                    .expect("positive depth");
                if cam_j.intrinsics.project(&t.transform(&p)).valid {
                    inside += 1;
                }
            }
            x += stride;
        }
        y += stride;
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}

/// Build the covisibility graph for a list of promoted keyframe frames.
pub fn build_graph(frames: &[Frame], rig: &Rig, params: &GraphParams) -> CovisibilityGraph {
    let n = frames.len();
    let mut edges = Vec::new();
    // Temporal: same camera, index distance 1..=window, older -> newer.
    for i in 0..n {
        for j in (i + 1)..n.min(i + params.window + 1) {
            for cam in rig.cameras() {
                edges.push(EdgeKey {
                    kf_i: i,
                    cam_i: cam.id,
                    kf_j: j,
                    cam_j: cam.id,
                    kind: PairKind::Temporal,
                });
            }
        }
    }
    // Cross-view: ordered camera pairs at each keyframe, gated on overlap.
    for (k, frame) in frames.iter().enumerate() {
        for a in 0..rig.len() {
            for b in 0..rig.len() {
                if a == b {
                    continue;
                }
                if cross_view_overlap(frame, rig, a, b, params.stride) >= params.overlap_min {
                    edges.push(EdgeKey {
                        kf_i: k,
                        cam_i: rig.cameras()[a].id,
                        kf_j: k,
                        cam_j: rig.cameras()[b].id,
                        kind: PairKind::CrossView,
                    });
                }
            }
        }
    }
    CovisibilityGraph {
        n_keyframes: n,
        edges,
    }
}
