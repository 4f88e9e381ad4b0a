//! Online tracking and mapping.
//!
//! Two logical workers process each promoted keyframe: the tracker attaches
//! priors, solves the window bundle adjustment (with the alignment step
//! interleaved when enabled) and transports the map under every resulting
//! pose change; the mapper then spawns Gaussians for uncovered regions and
//! runs the photometric refinement with its densify/prune cadences. The
//! workers communicate only through the keyframe list and the map, and every
//! mapping step depends on the tracker's latest transport, so the scheduler
//! runs them back to back. That single schedule is what makes rerunning a
//! config bitwise reproducible; deterministic mode additionally zeroes the
//! wall-clock timings so the report itself serializes identically.

use crate::error::{Error, Result};
use crate::geometry::{CamId, Rig, Se3};
use crate::gsmap::GaussianMap;
use crate::jdsa::{jdsa_solve, JdsaProblem};
use crate::mcba::{mcba_optimize, BaProblem, INV_DEPTH_MAX, INV_DEPTH_MIN};
use crate::pipeline::config::{
    KeyframeTrace, MapStats, PipelineConfig, RunReport, TrajectoryEntry,
};
use crate::rasterizer::{optimize_map, render, OptimizeView, RenderTargets, View};
use crate::synth::{
    build_graph, corrupt_depth_prior, keyframe_from_frame, keyframe_select,
    sample_correspondences, Frame, GraphParams, Keyframe, KeyframeCam, Scene,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

/// Everything an online run produces. The source frames of the promoted
/// keyframes are kept because the offline stage rebuilds the covisibility
/// graph and its correspondences from them.
#[derive(Debug, Clone)]
pub struct OnlineResult {
    pub keyframes: Vec<Keyframe>,
    pub frames: Vec<Frame>,
    pub map: GaussianMap,
    pub report: RunReport,
}

impl OnlineResult {
    pub fn trajectory(&self) -> &[TrajectoryEntry] {
        &self.report.trajectory
    }
}

pub(crate) fn cam_index(rig: &Rig, id: CamId) -> usize {
    rig.cameras()
        .iter()
        .position(|c| c.id == id)
        .expect("camera id comes from this rig")
}

/// Prefixes solver errors with the keyframe they belong to, keeping the
/// variant (and any cost trace) intact.
fn with_keyframe(err: Error, kf: usize) -> Error {
    let tag = format!("keyframe {kf}");
    match err {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{tag}: {m}")),
        Error::Solver(m) => Error::Solver(format!("{tag}: {m}")),
        Error::Optimization(m) => Error::Optimization(format!("{tag}: {m}")),
        Error::Convergence {
            iterations,
            msg,
            cost_trace,
        } => Error::Convergence {
            iterations,
            msg: format!("{tag}: {msg}"),
            cost_trace,
        },
        Error::Linearization { edge, msg } => Error::Linearization {
            edge,
            msg: format!("{tag}: {msg}"),
        },
        other => other,
    }
}

/// Writes optimized inverse depths back into a keyframe camera and fills
/// every other pixel from the prior rescaled by the (possibly updated)
/// grid. Sample pixels carry the bundle-adjusted value; the rest carry
/// `1 / (d_prior * s(x, y))`.
fn refill_inv_depth(kc: &mut KeyframeCam, samples: &BTreeMap<(u32, u32), f64>) -> Result<()> {
    let (w, h) = (kc.inv_depth.width(), kc.inv_depth.height());
    for y in 0..h {
        for x in 0..w {
            if let Some(&d) = samples.get(&(x, y)) {
                kc.inv_depth.set(x, y, 0, d as f32);
                kc.inv_valid.set(x, y, 0, 1.0);
                continue;
            }
            let prior = f64::from(kc.depth_prior.get(x, y, 0));
            if prior > 0.0 {
                let s = kc.scale_grid.interp(f64::from(x), f64::from(y))?;
                let inv = (1.0 / (prior * s)).clamp(INV_DEPTH_MIN, INV_DEPTH_MAX);
                kc.inv_depth.set(x, y, 0, inv as f32);
                kc.inv_valid.set(x, y, 0, 1.0);
            } else {
                kc.inv_depth.set(x, y, 0, 0.0);
                kc.inv_valid.set(x, y, 0, 0.0);
            }
        }
    }
    Ok(())
}

/// Solves MCBA (and optionally JDSA) over keyframes `[start, len)` and
/// writes the results back: poses with map transport, depths and grids with
/// a dense refill. Returns the accepted-cost traces.
pub(crate) fn solve_window(
    scene: &Scene,
    rig: &Rig,
    config: &PipelineConfig,
    frames: &[Frame],
    keyframes: &mut [Keyframe],
    map: &mut GaussianMap,
    start: usize,
    run_jdsa: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let graph_params = GraphParams {
        window: config.ba_window,
        overlap_min: config.overlap_min,
        stride: config.corr.stride,
    };
    let graph = build_graph(&frames[start..], rig, &graph_params);
    let mut corr_sets = Vec::new();
    for edge in &graph.edges {
        let set = sample_correspondences(scene, rig, &frames[start..], edge, &config.corr, rng);
        if !set.samples.is_empty() {
            corr_sets.push(set);
        }
    }
    if corr_sets.is_empty() {
        // A lone monocular keyframe has no edges yet; nothing to solve.
        return Ok((Vec::new(), Vec::new()));
    }

    let poses: Vec<Se3> = keyframes[start..].iter().map(|kf| kf.pose).collect();
    let fixed: BTreeSet<usize> = [0].into_iter().collect();
    let mut problem = BaProblem::build(poses, rig.clone(), &corr_sets, fixed, |kf, cam, px| {
        let ci = cam_index(rig, cam);
        f64::from(keyframes[start + kf].cams[ci].inv_depth.get(px.0, px.1, 0))
    })?;
    let mcba_report = mcba_optimize(&mut problem, &config.mcba)?;

    let (ba, grids, jdsa_trace) = if run_jdsa {
        let mut grid_map = BTreeMap::new();
        let mut priors = vec![0.0; problem.depths.len()];
        for block in &problem.depth_blocks {
            let ci = cam_index(rig, block.cam);
            let kc = &keyframes[start + block.kf].cams[ci];
            grid_map.insert((block.kf, block.cam), kc.scale_grid.clone());
            for (n, &(x, y)) in block.pixels.iter().enumerate() {
                priors[block.offset + n] = f64::from(kc.depth_prior.get(x, y, 0));
            }
        }
        let mut jp = JdsaProblem::new(problem, grid_map, priors)?;
        let jdsa_report = jdsa_solve(&mut jp, &config.jdsa)?;
        (jp.ba, Some(jp.grids), jdsa_report.cost_trace)
    } else {
        (problem, None, Vec::new())
    };

    // Pose write-back. Unchanged poses (the gauge keeps its bit pattern by
    // the solver contract) are skipped so no spurious transport happens.
    for (local, &new_pose) in ba.poses.iter().enumerate() {
        let kf = &mut keyframes[start + local];
        if kf.pose == new_pose {
            continue;
        }
        let delta = new_pose.compose(&kf.pose.inverse());
        kf.pose = new_pose;
        if !map.anchored_ids(kf.frame_index).is_empty() {
            map.apply_pose_update(kf.frame_index, &delta, None)?;
        }
    }

    // Depth and grid write-back, one block per (keyframe, camera).
    for block in &ba.depth_blocks {
        let ci = cam_index(rig, block.cam);
        let kc = &mut keyframes[start + block.kf].cams[ci];
        if let Some(grids) = &grids {
            kc.scale_grid = grids[&(block.kf, block.cam)].clone();
        }
        let mut samples = BTreeMap::new();
        for (n, &px) in block.pixels.iter().enumerate() {
            samples.insert(px, ba.depths[block.offset + n]);
        }
        refill_inv_depth(kc, &samples)?;
    }

    Ok((mcba_report.cost_trace, jdsa_trace))
}

/// Renders the accumulated blend weight of one rig camera, the coverage
/// signal that gates densification.
fn coverage_raster(
    map: &GaussianMap,
    kf: &Keyframe,
    rig: &Rig,
    cam_idx: usize,
    config: &PipelineConfig,
) -> crate::io::Raster {
    let cam = &rig.cameras()[cam_idx];
    let view = View::for_camera(&kf.pose, &cam.cam_to_body, cam.intrinsics);
    render(map, &view, &config.mapping.render).coverage_raster()
}

/// The mapper's work for one promoted keyframe: spawn Gaussians where the
/// current render leaves the frame uncovered, run the photometric
/// refinement over the window, then apply the densify/prune cadences.
fn map_keyframe(
    rig: &Rig,
    config: &PipelineConfig,
    keyframes: &[Keyframe],
    map: &mut GaussianMap,
    start: usize,
    stats: &mut MapStats,
) -> Result<Vec<f64>> {
    let k = keyframes.len() - 1;
    for ci in 0..rig.len() {
        let ids = if map.is_empty() {
            map.init_from_keyframe(&keyframes[k], rig, ci, &config.init)?
        } else {
            let coverage = coverage_raster(map, &keyframes[k], rig, ci, config);
            map.densify(&keyframes[k], rig, ci, &coverage, &config.init)?
        };
        stats.densified += ids.len();
    }

    let mapping_losses = if config.mapping.iterations > 0 && !map.is_empty() {
        let mut mcfg = config.mapping.clone();
        mcfg.with_pose = false;
        mcfg.with_exposure = false;
        let mut views = Vec::new();
        for (i, kf) in keyframes.iter().enumerate().skip(start) {
            for (ci, cam) in rig.cameras().iter().enumerate() {
                views.push(OptimizeView {
                    frame: i,
                    cam_from_body: cam.cam_to_body,
                    intr: cam.intrinsics,
                    targets: RenderTargets::from_keyframe_cam(&kf.cams[ci])?,
                });
            }
        }
        let mut poses: BTreeMap<usize, Se3> = keyframes
            .iter()
            .enumerate()
            .skip(start)
            .map(|(i, kf)| (i, kf.pose))
            .collect();
        let mut exposures = BTreeMap::new();
        let report = optimize_map(map, &views, &mut poses, &mut exposures, &mcfg)?;
        report.loss_trace
    } else {
        Vec::new()
    };

    let promoted = keyframes.len();
    if config.densify_every > 0 && promoted % config.densify_every == 0 && !map.is_empty() {
        for ci in 0..rig.len() {
            let coverage = coverage_raster(map, &keyframes[k], rig, ci, config);
            stats.densified += map
                .densify(&keyframes[k], rig, ci, &coverage, &config.init)?
                .len();
        }
    }
    if config.prune_every > 0 && promoted % config.prune_every == 0 {
        stats.pruned += map.prune(config.prune_alpha).len();
    }
    Ok(mapping_losses)
}

/// Runs the online stage over a frame stream.
///
/// Frame 0 is always promoted; later frames are promoted when their mean
/// optical flow against the last keyframe exceeds the threshold. Each
/// promoted keyframe gets corrupted depth priors attached, a
/// constant-velocity pose initialization, the window solve, map transport
/// and the mapping update. Given the same config the run is deterministic.
pub fn online_track(
    scene: &Scene,
    frames: &[Frame],
    rig: &Rig,
    config: &PipelineConfig,
) -> Result<OnlineResult> {
    config.validate()?;
    if frames.len() < 2 {
        return Err(Error::invalid(format!(
            "online tracking needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    for frame in frames {
        if frame.cams.len() != rig.len() {
            return Err(Error::invalid(format!(
                "frame {} carries {} cameras but the rig has {}",
                frame.index,
                frame.cams.len(),
                rig.len()
            )));
        }
    }

    let run_start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut keyframes: Vec<Keyframe> = Vec::new();
    let mut kf_frames: Vec<Frame> = Vec::new();
    let mut map = GaussianMap::new();
    let mut traces: Vec<KeyframeTrace> = Vec::new();
    let mut stats = MapStats::default();

    for frame in frames {
        let promote = match kf_frames.last() {
            None => true,
            Some(last) => keyframe_select(
                last,
                frame,
                rig,
                config.flow_stride,
                config.keyframe_threshold_px,
            ),
        };
        if !promote {
            continue;
        }
        let kf_start = Instant::now();
        let k = keyframes.len();

        // Tracker: priors, then a constant-velocity pose initialization.
        // The first keyframe anchors the gauge at its reference pose.
        let mut priors = Vec::with_capacity(rig.len());
        for cam in &frame.cams {
            priors.push(corrupt_depth_prior(&cam.depth, &config.prior, &mut rng));
        }
        let mut kf = keyframe_from_frame(frame, priors, config.grid_rows, config.grid_cols);
        kf.pose = match k {
            0 => frame.pose,
            1 => keyframes[0].pose,
            _ => {
                let delta = keyframes[k - 1]
                    .pose
                    .compose(&keyframes[k - 2].pose.inverse());
                delta.compose(&keyframes[k - 1].pose)
            }
        };
        keyframes.push(kf);
        kf_frames.push(frame.clone());

        let start = keyframes.len().saturating_sub(config.ba_window);
        let (mcba_costs, jdsa_costs) = solve_window(
            scene,
            rig,
            config,
            &kf_frames,
            &mut keyframes,
            &mut map,
            start,
            config.jdsa_enabled,
            &mut rng,
        )
        .map_err(|e| with_keyframe(e, k))?;

        // Mapper: fusion and photometric refinement over the same window.
        let mapping_losses = map_keyframe(rig, config, &keyframes, &mut map, start, &mut stats)
            .map_err(|e| with_keyframe(e, k))?;

        traces.push(KeyframeTrace {
            keyframe: k,
            frame_index: frame.index,
            mcba_costs,
            jdsa_costs,
            mapping_losses,
            seconds: if config.deterministic {
                0.0
            } else {
                kf_start.elapsed().as_secs_f64()
            },
        });
    }

    let trajectory: Vec<TrajectoryEntry> = keyframes
        .iter()
        .map(|kf| TrajectoryEntry {
            frame_index: kf.frame_index,
            timestamp: kf.timestamp,
            pose: kf.pose,
        })
        .collect();
    debug_assert_eq!(trajectory.len(), keyframes.len());

    stats.gaussians = map.len();
    let mut metrics = BTreeMap::new();
    metrics.insert("keyframes".to_string(), keyframes.len() as f64);
    metrics.insert("map_gaussians".to_string(), map.len() as f64);
    if let Some(cost) = traces.iter().rev().find_map(|t| t.mcba_costs.last()) {
        metrics.insert("final_mcba_cost".to_string(), *cost);
    }
    if let Some(loss) = traces.iter().rev().find_map(|t| t.mapping_losses.last()) {
        metrics.insert("final_mapping_loss".to_string(), *loss);
    }

    let report = RunReport {
        traces,
        trajectory,
        map_stats: stats,
        metrics,
        total_seconds: if config.deterministic {
            0.0
        } else {
            run_start.elapsed().as_secs_f64()
        },
    };
    Ok(OnlineResult {
        keyframes,
        frames: kf_frames,
        map,
        report,
    })
}
