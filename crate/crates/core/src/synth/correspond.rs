//! Correspondence oracles.
//!
//! Stands in for a learned matching network: correspondences come from true
//! geometry. In exact mode the target pixel is the true reprojection of the
//! source pixel (occlusion-checked against the scene); in noisy mode Gaussian
//! pixel noise is added and a configurable fraction is replaced by uniform
//! outliers that carry a small confidence weight.
//!
//! Source pixels sit on the stride grid (offset by stride/2), the same grid
//! that bundle adjustment uses to address its inverse-depth variables.

use crate::geometry::{pair_transform, Rig};
use crate::synth::graph::EdgeKey;
use crate::synth::scene::Scene;
use crate::synth::sequence::Frame;
use nalgebra::Vector2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CorrMode {
    Exact,
    Noisy {
        /// Pixel noise standard deviation per axis.
        sigma: f64,
        /// Fraction of samples replaced by uniform outliers.
        outlier_rate: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrParams {
    pub mode: CorrMode,
    pub stride: u32,
    /// Confidence weight assigned to injected outliers.
    pub outlier_weight: f64,
    /// Depth agreement tolerance of the occlusion check.
    pub occlusion_eps: f64,
}

impl Default for CorrParams {
    fn default() -> Self {
        CorrParams {
            mode: CorrMode::Exact,
            stride: 4,
            outlier_weight: 0.01,
            occlusion_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrSample {
    pub src_px: Vector2<f64>,
    pub target_px: Vector2<f64>,
    /// Per-axis confidence weight.
    pub weight: Vector2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub edge: EdgeKey,
    pub samples: Vec<CorrSample>,
}

/// Strided sample pixel positions for a raster, offset by stride/2 on both
/// axes. This is the shared addressing of depth variables.
pub fn sample_pixels(width: u32, height: u32, stride: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut y = stride / 2;
    while y < height {
        let mut x = stride / 2;
        while x < width {
            out.push((x, y));
            x += stride;
        }
        y += stride;
    }
    out
}

/// Exact depth at a source pixel, recomputed from the scene in f64 so the
/// occlusion check is not at the mercy of f32 raster rounding.
pub fn cast_depth(scene: &Scene, rig: &Rig, frame: &Frame, cam_idx: usize, px: &Vector2<f64>) -> Option<f64> {
    let cam = &rig.cameras()[cam_idx];
    let t_wc = frame.pose.compose(&cam.cam_to_body);
    let dir = t_wc.rotate(&cam.intrinsics.ray_dir(px));
    scene.trace(&t_wc.translation, &dir).map(|h| h.t)
}

/// Sample correspondences for one covisibility edge from ground truth.
///
/// Requires the rng for noisy mode; exact mode never touches it. Edges with
/// no geometric overlap simply produce an empty set.
pub fn sample_correspondences(
    scene: &Scene,
    rig: &Rig,
    frames: &[Frame],
    edge: &EdgeKey,
    params: &CorrParams,
    rng: &mut ChaCha8Rng,
) -> CorrespondenceSet {
    let cam_i_idx = rig
        .cameras()
        .iter()
        .position(|c| c.id == edge.cam_i)
        .expect("edge camera in rig");
    let cam_j_idx = rig
        .cameras()
        .iter()
        .position(|c| c.id == edge.cam_j)
        .expect("edge camera in rig");
    let frame_i = &frames[edge.kf_i];
    let frame_j = &frames[edge.kf_j];
    let intr_j = &rig.cameras()[cam_j_idx].intrinsics;
    let t = pair_transform(
        edge.kind,
        &frame_i.pose,
        &frame_j.pose,
        rig,
        edge.cam_i,
        edge.cam_j,
    )
    .expect("edge kind and cameras validated by graph construction");

    let noise = match params.mode {
        CorrMode::Noisy { sigma, .. } if sigma > 0.0 => {
            Some(Normal::new(0.0, sigma).expect("sigma positive"))
        }
        _ => None,
    };

    let mut samples = Vec::new();
    let src = &frames[edge.kf_i].cams[cam_i_idx];
    for (x, y) in sample_pixels(src.depth.width(), src.depth.height(), params.stride) {
        let px = Vector2::new(x as f64, y as f64);
        let Some(z) = cast_depth(scene, rig, frame_i, cam_i_idx, &px) else {
            continue;
        };
        let p_ci = rig.cameras()[cam_i_idx]
            .intrinsics
            .backproject(&px, 1.0 / z)
            .expect("positive depth");
        let proj = intr_j.project(&t.transform(&p_ci));
        if !proj.valid {
            continue;
        }
        // Occlusion: the point must be the surface actually seen from the
        // target view at that pixel.
        let Some(z_tgt) = cast_depth(scene, rig, frame_j, cam_j_idx, &proj.pixel) else {
            continue;
        };
        if (z_tgt - proj.depth).abs() > params.occlusion_eps {
            continue;
        }

        let (target_px, weight) = match params.mode {
            CorrMode::Exact => (proj.pixel, Vector2::new(1.0, 1.0)),
            CorrMode::Noisy { outlier_rate, .. } => {
                if rng.gen::<f64>() < outlier_rate {
                    let u = rng.gen_range(0.0..(intr_j.width - 1) as f64);
                    let v = rng.gen_range(0.0..(intr_j.height - 1) as f64);
                    (
                        Vector2::new(u, v),
                        Vector2::new(params.outlier_weight, params.outlier_weight),
                    )
                } else {
                    let mut p = proj.pixel;
                    if let Some(n) = &noise {
                        p.x += n.sample(rng);
                        p.y += n.sample(rng);
                    }
                    (p, Vector2::new(1.0, 1.0))
                }
            }
        };
        samples.push(CorrSample {
            src_px: px,
            target_px,
            weight,
        });
    }
    CorrespondenceSet {
        edge: *edge,
        samples,
    }
}
