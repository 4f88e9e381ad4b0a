//! Offline refinement: global bundle adjustment over the full keyframe
//! graph, then a joint optimization of the map, the keyframe poses and
//! per-keyframe exposure matrices.
//!
//! Stage 1 treats the map as a spectator: poses move because bundle
//! adjustment says so, and every anchored Gaussian is transported along.
//! Stage 2 is the opposite regime: poses, exposures and Gaussians are free
//! variables of one rendering loss and move together by gradient steps, so
//! no transport happens there; transporting would exactly cancel each pose
//! step's effect on its own view and undo the joint optimum.

use crate::error::{Error, Result};
use crate::geometry::{Rig, Se3};
use crate::gsmap::GaussianMap;
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::online::solve_window;
use crate::rasterizer::{optimize_map, OptimizeView, RenderTargets};
use crate::synth::{Frame, Keyframe, Scene};
use nalgebra::Matrix3x4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// What the offline stage did. Poses and the map are refined in place;
/// exposures are new state created here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineReport {
    /// Accepted-cost trace of the global bundle adjustment, empty when the
    /// stage is disabled.
    pub global_ba_costs: Vec<f64>,
    /// Loss trace of the joint refinement, empty when the stage is
    /// disabled.
    pub refine_losses: Vec<f64>,
    /// Per-keyframe exposure matrices, keyed by keyframe index.
    pub exposures: BTreeMap<usize, Matrix3x4<f64>>,
    /// Wall-clock seconds; 0 in deterministic mode.
    pub seconds: f64,
}

/// Prefixes an error with the offline stage it came from.
fn with_stage(err: Error, stage: &str) -> Error {
    match err {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{stage}: {m}")),
        Error::Solver(m) => Error::Solver(format!("{stage}: {m}")),
        Error::Optimization(m) => Error::Optimization(format!("{stage}: {m}")),
        Error::Convergence {
            iterations,
            msg,
            cost_trace,
        } => Error::Convergence {
            iterations,
            msg: format!("{stage}: {msg}"),
            cost_trace,
        },
        Error::Linearization { edge, msg } => Error::Linearization {
            edge,
            msg: format!("{stage}: {msg}"),
        },
        other => other,
    }
}

/// Runs the enabled offline stages over a completed online run.
///
/// `frames` are the source frames of the promoted keyframes, in keyframe
/// order; the correspondence oracle rebuilds the full covisibility graph
/// from them. Keyframe poses, depths and the map are refined in place.
pub fn offline_refine(
    scene: &Scene,
    frames: &[Frame],
    rig: &Rig,
    keyframes: &mut [Keyframe],
    map: &mut GaussianMap,
    config: &PipelineConfig,
) -> Result<OfflineReport> {
    config.validate()?;
    if keyframes.is_empty() {
        return Err(Error::invalid("offline refinement needs at least one keyframe"));
    }
    if frames.len() != keyframes.len() {
        return Err(Error::invalid(format!(
            "{} source frames for {} keyframes",
            frames.len(),
            keyframes.len()
        )));
    }
    let start = Instant::now();

    let global_ba_costs = if config.offline_global_ba {
        // A separate rng stream keeps the offline stage independent of how
        // much randomness the online stage consumed.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let (costs, _) = solve_window(
            scene, rig, config, frames, keyframes, map, 0, false, &mut rng,
        )
        .map_err(|e| with_stage(e, "global bundle adjustment"))?;
        costs
    } else {
        Vec::new()
    };

    let mut exposures = BTreeMap::new();
    let refine_losses = if config.offline_map_refine && config.offline.iterations > 0 {
        let mut ocfg = config.offline.clone();
        ocfg.with_pose = true;
        ocfg.with_exposure = true;
        let mut views = Vec::new();
        for (i, kf) in keyframes.iter().enumerate() {
            for (ci, cam) in rig.cameras().iter().enumerate() {
                views.push(OptimizeView {
                    frame: i,
                    cam_from_body: cam.cam_to_body,
                    intr: cam.intrinsics,
                    targets: RenderTargets::from_keyframe_cam(&kf.cams[ci])
                        .map_err(|e| with_stage(e, "joint map refinement"))?,
                });
            }
        }
        let mut poses: BTreeMap<usize, Se3> = keyframes
            .iter()
            .enumerate()
            .map(|(i, kf)| (i, kf.pose))
            .collect();
        let report = optimize_map(map, &views, &mut poses, &mut exposures, &ocfg)
            .map_err(|e| with_stage(e, "joint map refinement"))?;
        for (i, kf) in keyframes.iter_mut().enumerate() {
            kf.pose = poses[&i];
        }
        report.loss_trace
    } else {
        Vec::new()
    };

    Ok(OfflineReport {
        global_ba_costs,
        refine_losses,
        exposures,
        seconds: if config.deterministic {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        },
    })
}
