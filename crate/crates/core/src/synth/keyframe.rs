//! Keyframe state and mean-flow keyframe selection.

use crate::geometry::{pair_transform, PairKind, Rig, Se3};
use crate::io::Raster;
use crate::jdsa::ScaleGrid;
use crate::synth::sequence::Frame;
use nalgebra::Vector2;

/// Per-camera keyframe payload. Rasters share the camera resolution; the
/// scale grid compensates the depth prior's low-frequency bias.
#[derive(Debug, Clone)]
pub struct KeyframeCam {
    pub image: Raster,
    /// Possibly corrupted metric depth prior.
    pub depth_prior: Raster,
    /// Bias field that was injected into the prior, kept as recovery ground
    /// truth for evaluation only. Solvers never read it.
    pub bias_truth: Raster,
    /// World-frame normal prior.
    pub normal_prior: Raster,
    /// Optimized inverse depth, refined by bundle adjustment.
    pub inv_depth: Raster,
    /// 1 where `inv_depth` is meaningful.
    pub inv_valid: Raster,
    pub scale_grid: ScaleGrid,
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    /// Index of the source frame in the sequence.
    pub frame_index: usize,
    pub timestamp: f64,
    /// Current body pose estimate, body-to-world.
    pub pose: Se3,
    pub cams: Vec<KeyframeCam>,
}

/// Default mean-flow promotion threshold in pixels, calibrated at 640 wide
/// and scaled linearly with resolution.
pub fn default_flow_threshold(width: u32) -> f64 {
    12.0 * width as f64 / 640.0
}

/// Mean optical flow between a reference frame and the current frame,
/// averaged over all rig cameras and a strided pixel grid, using the
/// reference frame's exact depth. Pixels whose reprojection leaves the image
/// are skipped.
pub fn mean_flow(reference: &Frame, current: &Frame, rig: &Rig, stride: u32) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ci, cam) in rig.cameras().iter().enumerate() {
        let t = pair_transform(
            PairKind::Temporal,
            &reference.pose,
            &current.pose,
            rig,
            cam.id,
            cam.id,
        )
        .expect("rig camera ids are valid by construction");
        let depth = &reference.cams[ci].depth;
        let mut y = stride / 2;
        while y < depth.height() {
            let mut x = stride / 2;
            while x < depth.width() {
                let z = depth.get(x, y, 0) as f64;
                if z > 0.0 {
                    let px = Vector2::new(x as f64, y as f64);
                    let p = cam
                        .intrinsics
                        .backproject(&px, 1.0 / z)
                        .expect("positive depth");
                    let proj = cam.intrinsics.project(&t.transform(&p));
                    if proj.valid {
                        total += (proj.pixel - px).norm();
                        count += 1;
                    }
                }
                x += stride;
            }
            y += stride;
        }
    }
    if count == 0 {
        // No overlap at all; force a promotion so tracking can re-anchor.
        return f64::INFINITY;
    }
    total / count as f64
}

/// Keyframe promotion: true when the mean flow against the last keyframe's
/// frame exceeds the threshold.
pub fn keyframe_select(reference: &Frame, current: &Frame, rig: &Rig, stride: u32, threshold_px: f64) -> bool {
    mean_flow(reference, current, rig, stride) > threshold_px
}

/// Build keyframe state from a frame: priors attached later by the pipeline,
/// inverse depth seeded from the given prior, grid initialized to 1.
pub fn keyframe_from_frame(
    frame: &Frame,
    priors: Vec<(Raster, Raster)>,
    grid_rows: usize,
    grid_cols: usize,
) -> Keyframe {
    let cams = frame
        .cams
        .iter()
        .zip(priors)
        .map(|(cf, (depth_prior, bias_truth))| {
            let (w, h) = (cf.image.width(), cf.image.height());
            let mut inv_depth = Raster::new(w, h, 1);
            let mut inv_valid = Raster::new(w, h, 1);
            for y in 0..h {
                for x in 0..w {
                    let d = depth_prior.get(x, y, 0);
                    if d > 0.0 {
                        inv_depth.set(x, y, 0, 1.0 / d);
                        inv_valid.set(x, y, 0, 1.0);
                    }
                }
            }
            KeyframeCam {
                image: cf.image.clone(),
                depth_prior,
                bias_truth,
                normal_prior: cf.normal.clone(),
                inv_depth,
                inv_valid,
                scale_grid: ScaleGrid::uniform(grid_rows, grid_cols, w, h, 1.0)
                    .expect("camera resolution exceeds 2x2"),
            }
        })
        .collect();
    Keyframe {
        frame_index: frame.index,
        timestamp: frame.timestamp,
        pose: frame.pose,
        cams,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pinhole;
    use crate::synth::scene::{generate_scene, SceneConfig};
    use crate::synth::sequence::{generate_sequence, PoseSpline, SequenceConfig};
    use nalgebra::{UnitQuaternion, Vector3};

    fn rig() -> Rig {
        Rig::monocular(Pinhole::new(40.0, 40.0, 16.0, 12.0, 32, 24).unwrap())
    }

    fn frames_for(spline: PoseSpline, n: usize) -> Vec<Frame> {
        let scene = generate_scene(&SceneConfig::default()).unwrap();
        generate_sequence(
            &scene,
            &rig(),
            &spline,
            &SequenceConfig {
                n_frames: n,
                frame_dt: 0.1,
            },
        )
        .unwrap()
    }

    #[test]
    fn identical_frames_have_zero_flow() {
        let frames = frames_for(PoseSpline::new(vec![Se3::identity()]).unwrap(), 2);
        let f = mean_flow(&frames[0], &frames[1], &rig(), 4);
        assert!(f < 1e-12, "flow {f}");
        assert!(!keyframe_select(&frames[0], &frames[1], &rig(), 4, 0.5));
    }

    #[test]
    fn pure_rotation_flow_matches_dense_oracle() {
        // Independent oracle: dense per-pixel reprojection computed from
        // scratch (no pair_transform), restricted to the same strided set.
        let yaw = 0.02_f64;
        let spline = PoseSpline::new(vec![
            Se3::identity(),
            Se3::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(0.0, yaw, 0.0)),
                Vector3::zeros(),
            ),
        ])
        .unwrap();
        let frames = frames_for(spline, 2);
        let rig = rig();
        let got = mean_flow(&frames[0], &frames[1], &rig, 4);

        let cam = &rig.cameras()[0];
        let depth = &frames[0].cams[0].depth;
        let mut total = 0.0;
        let mut count = 0;
        let r_cur_inv = frames[1].pose.rotation.inverse();
        for y in (2..24).step_by(4) {
            for x in (2..32).step_by(4) {
                let z = depth.get(x, y, 0) as f64;
                if z <= 0.0 {
                    continue;
                }
                let px = Vector2::new(x as f64, y as f64);
                let dir = cam.intrinsics.ray_dir(&px);
                let p_world = frames[0].pose.transform(&(dir * z));
                let p_cur = r_cur_inv * (p_world - frames[1].pose.translation);
                let proj = cam.intrinsics.project(&p_cur);
                if proj.valid {
                    total += (proj.pixel - px).norm();
                    count += 1;
                }
            }
        }
        let want = total / count as f64;
        assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
        assert!(got > 0.0);
    }

    #[test]
    fn threshold_splits_promotion() {
        let spline = PoseSpline::new(vec![
            Se3::identity(),
            Se3::new(UnitQuaternion::identity(), Vector3::new(0.3, 0.0, 0.0)),
        ])
        .unwrap();
        let frames = frames_for(spline, 2);
        let rig = rig();
        let f = mean_flow(&frames[0], &frames[1], &rig, 4);
        assert!(f > 0.0);
        assert!(keyframe_select(&frames[0], &frames[1], &rig, 4, f * 0.5));
        assert!(!keyframe_select(&frames[0], &frames[1], &rig, 4, f * 2.0));
    }

    #[test]
    fn default_threshold_scales_with_width() {
        assert!((default_flow_threshold(640) - 12.0).abs() < 1e-12);
        assert!((default_flow_threshold(64) - 1.2).abs() < 1e-12);
    }
}
