//! Bundle adjustment problem state.
//!
//! Variables are the free body poses plus one inverse depth per distinct
//! correspondence source pixel. Depth variables are addressed through the
//! stride grid: every correspondence whose source is pixel `p` of camera `c`
//! at keyframe `t` shares the single variable `(t, c, p)`, which is what
//! keeps the depth-depth Hessian block diagonal.

use crate::error::{Error, Result};
use crate::geometry::{CamId, Rig, Se3};
use crate::synth::{CorrespondenceSet, EdgeKey};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Inverse depths are clamped into this range after every update.
pub const INV_DEPTH_MIN: f64 = 1e-4;
pub const INV_DEPTH_MAX: f64 = 1e3;

/// The depth variables owned by one (keyframe, camera) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthBlock {
    pub kf: usize,
    pub cam: CamId,
    /// Start of this block in the global depth vector.
    pub offset: usize,
    /// Sample pixels in row-major order.
    pub pixels: Vec<(u32, u32)>,
}

/// One correspondence with its depth variable resolved to a global index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedSample {
    pub src_px: Vector2<f64>,
    pub target_px: Vector2<f64>,
    pub weight: Vector2<f64>,
    pub depth_var: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedEdge {
    pub key: EdgeKey,
    pub samples: Vec<ResolvedSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaProblem {
    pub poses: Vec<Se3>,
    pub rig: Rig,
    pub depth_blocks: Vec<DepthBlock>,
    /// Inverse depths, concatenated block by block.
    pub depths: Vec<f64>,
    pub edges: Vec<ResolvedEdge>,
    /// Gauge-fixed pose indices. Never empty, never touched by the solver.
    pub fixed: BTreeSet<usize>,
}

fn integer_pixel(px: &Vector2<f64>) -> Result<(u32, u32)> {
    let (rx, ry) = (px.x.round(), px.y.round());
    if (px.x - rx).abs() > 1e-9 || (px.y - ry).abs() > 1e-9 || rx < 0.0 || ry < 0.0 {
        return Err(Error::invalid(format!(
            "correspondence source pixel ({}, {}) is not on the integer sample grid",
            px.x, px.y
        )));
    }
    Ok((rx as u32, ry as u32))
}

impl BaProblem {
    /// Assemble a problem from poses, calibration and correspondence sets.
    /// `init_inv_depth` provides the starting inverse depth per source pixel
    /// (usually the depth prior, possibly rescaled).
    pub fn build(
        poses: Vec<Se3>,
        rig: Rig,
        corr_sets: &[CorrespondenceSet],
        fixed: BTreeSet<usize>,
        mut init_inv_depth: impl FnMut(usize, CamId, (u32, u32)) -> f64,
    ) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("problem needs at least one pose"));
        }
        if fixed.is_empty() {
            return Err(Error::invalid(
                "gauge freedom: at least one pose must be held fixed",
            ));
        }
        for &f in &fixed {
            if f >= poses.len() {
                return Err(Error::invalid(format!(
                    "fixed pose index {f} out of range ({} poses)",
                    poses.len()
                )));
            }
        }

        // Collect the distinct source pixels per (keyframe, camera).
        let mut pixel_sets: BTreeMap<(usize, CamId), BTreeSet<(u32, u32)>> = BTreeMap::new();
        for set in corr_sets {
            let e = &set.edge;
            if e.kf_i >= poses.len() || e.kf_j >= poses.len() {
                return Err(Error::invalid(format!(
                    "edge {} references a keyframe outside the pose list",
                    e
                )));
            }
            rig.camera(e.cam_i)?;
            rig.camera(e.cam_j)?;
            for s in &set.samples {
                if !(s.weight.x.is_finite() && s.weight.y.is_finite())
                    || s.weight.x < 0.0
                    || s.weight.y < 0.0
                {
                    return Err(Error::invalid(format!(
                        "edge {}: weights must be finite and non-negative",
                        e
                    )));
                }
                pixel_sets
                    .entry((e.kf_i, e.cam_i))
                    .or_default()
                    .insert(integer_pixel(&s.src_px)?);
            }
        }

        let mut depth_blocks = Vec::new();
        let mut depths = Vec::new();
        let mut lookup: BTreeMap<(usize, CamId), BTreeMap<(u32, u32), usize>> = BTreeMap::new();
        for ((kf, cam), pixels) in &pixel_sets {
            let offset = depths.len();
            // Row-major pixel order inside the block for determinism.
            let mut ordered: Vec<(u32, u32)> = pixels.iter().copied().collect();
            ordered.sort_by_key(|&(x, y)| (y, x));
            let mut map = BTreeMap::new();
            for (n, &px) in ordered.iter().enumerate() {
                map.insert(px, offset + n);
                let d0 = init_inv_depth(*kf, *cam, px);
                if !d0.is_finite() {
                    return Err(Error::invalid(format!(
                        "initial inverse depth at kf {kf} cam {cam} px {px:?} is not finite"
                    )));
                }
                depths.push(d0.clamp(INV_DEPTH_MIN, INV_DEPTH_MAX));
            }
            depth_blocks.push(DepthBlock {
                kf: *kf,
                cam: *cam,
                offset,
                pixels: ordered,
            });
            lookup.insert((*kf, *cam), map);
        }

        let edges = corr_sets
            .iter()
            .map(|set| {
                let samples = set
                    .samples
                    .iter()
                    .map(|s| {
                        let px = integer_pixel(&s.src_px).expect("validated above");
                        ResolvedSample {
                            src_px: s.src_px,
                            target_px: s.target_px,
                            weight: s.weight,
                            depth_var: lookup[&(set.edge.kf_i, set.edge.cam_i)][&px],
                        }
                    })
                    .collect();
                ResolvedEdge {
                    key: set.edge,
                    samples,
                }
            })
            .collect();

        Ok(BaProblem {
            poses,
            rig,
            depth_blocks,
            depths,
            edges,
            fixed,
        })
    }

    pub fn n_depths(&self) -> usize {
        self.depths.len()
    }

    /// Free (non-fixed) pose indices in ascending order.
    pub fn free_poses(&self) -> Vec<usize> {
        (0..self.poses.len())
            .filter(|i| !self.fixed.contains(i))
            .collect()
    }

    /// Depth variable index for a sample pixel, if it exists.
    pub fn depth_var(&self, kf: usize, cam: CamId, px: (u32, u32)) -> Option<usize> {
        let block = self
            .depth_blocks
            .iter()
            .find(|b| b.kf == kf && b.cam == cam)?;
        block
            .pixels
            .iter()
            .position(|&p| p == px)
            .map(|n| block.offset + n)
    }
}

/// Snapshot format version. Bump on layout changes.
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    problem: BaProblem,
}

impl BaProblem {
    /// Serialize to the versioned JSON snapshot format.
    pub fn to_snapshot(&self) -> String {
        serde_json::to_string(&Snapshot {
            version: SNAPSHOT_VERSION,
            problem: self.clone(),
        })
        .expect("problem serialization cannot fail")
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let snap: Snapshot =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("problem snapshot: {e}")))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported snapshot version {} (expected {})",
                snap.version, SNAPSHOT_VERSION
            )));
        }
        Ok(snap.problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PairKind, Pinhole};
    use crate::synth::CorrSample;

    fn tiny_problem() -> BaProblem {
        let rig = Rig::monocular(Pinhole::new(40.0, 40.0, 16.0, 12.0, 32, 24).unwrap());
        let edge = EdgeKey {
            kf_i: 0,
            cam_i: 0,
            kf_j: 1,
            cam_j: 0,
            kind: PairKind::Temporal,
        };
        let sets = vec![CorrespondenceSet {
            edge,
            samples: vec![
                CorrSample {
                    src_px: Vector2::new(2.0, 2.0),
                    target_px: Vector2::new(3.0, 2.0),
                    weight: Vector2::new(1.0, 1.0),
                },
                CorrSample {
                    src_px: Vector2::new(6.0, 2.0),
                    target_px: Vector2::new(7.0, 2.0),
                    weight: Vector2::new(1.0, 1.0),
                },
            ],
        }];
        BaProblem::build(
            vec![Se3::identity(), Se3::identity()],
            rig,
            &sets,
            BTreeSet::from([0]),
            |_, _, _| 0.5,
        )
        .unwrap()
    }

    #[test]
    fn shared_source_pixels_share_depth_variables() {
        let p = tiny_problem();
        assert_eq!(p.n_depths(), 2);
        assert_eq!(p.edges[0].samples[0].depth_var, 0);
        assert_eq!(p.edges[0].samples[1].depth_var, 1);
        assert_eq!(p.depth_var(0, 0, (2, 2)), Some(0));
        assert_eq!(p.depth_var(0, 0, (6, 2)), Some(1));
        assert_eq!(p.depth_var(1, 0, (2, 2)), None);
    }

    #[test]
    fn empty_gauge_rejected() {
        let rig = Rig::monocular(Pinhole::new(40.0, 40.0, 16.0, 12.0, 32, 24).unwrap());
        let err = BaProblem::build(
            vec![Se3::identity()],
            rig,
            &[],
            BTreeSet::new(),
            |_, _, _| 0.5,
        );
        assert!(err.is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let p = tiny_problem();
        let text = p.to_snapshot();
        let q = BaProblem::from_snapshot(&text).unwrap();
        assert_eq!(q.poses.len(), 2);
        assert_eq!(q.depths, p.depths);
        assert_eq!(q.n_depths(), p.n_depths());
        assert_eq!(q.edges[0].samples[1].depth_var, 1);
        assert_eq!(q.fixed, p.fixed);
    }

    #[test]
    fn snapshot_version_checked() {
        let p = tiny_problem();
        let text = p.to_snapshot().replace("\"version\":1", "\"version\":99");
        assert!(BaProblem::from_snapshot(&text).is_err());
    }

    #[test]
    fn off_grid_source_pixel_rejected() {
        let rig = Rig::monocular(Pinhole::new(40.0, 40.0, 16.0, 12.0, 32, 24).unwrap());
        let edge = EdgeKey {
            kf_i: 0,
            cam_i: 0,
            kf_j: 1,
            cam_j: 0,
            kind: PairKind::Temporal,
        };
        let sets = vec![CorrespondenceSet {
            edge,
            samples: vec![CorrSample {
                src_px: Vector2::new(2.5, 2.0),
                target_px: Vector2::new(3.0, 2.0),
                weight: Vector2::new(1.0, 1.0),
            }],
        }];
        let err = BaProblem::build(
            vec![Se3::identity(), Se3::identity()],
            rig,
            &sets,
            BTreeSet::from([0]),
            |_, _, _| 0.5,
        );
        assert!(err.is_err());
    }
}
