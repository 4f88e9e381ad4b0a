//! First-order map optimization: Adam-style adaptive steps on every Gaussian
//! parameter, optionally joint with per-frame body poses and exposure
//! transforms.
//!
//! Every iteration is guarded: the step is applied tentatively, and if the
//! total loss increases the state (parameters and optimizer moments) is
//! rolled back and the global step multiplier halves. The reported loss
//! trace is therefore non-increasing by construction, which the mapping
//! stage relies on.

use std::collections::BTreeMap;

use nalgebra::{Matrix3x4, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{Pinhole, Se3};
use crate::gsmap::{Gaussian, GaussianMap};

use super::backward::{loss_backward, GaussGrad};
use super::forward::{render, RenderConfig, View};
use super::loss::{identity_exposure, map_loss, LossWeights, RenderTargets};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MIN_SCALE: f64 = 1e-6;
const OPACITY_MIN: f64 = 1e-4;
const OPACITY_MAX: f64 = 1.0 - 1e-4;
/// Below this step multiplier the guard has halved ~27 times; further
/// iterations cannot make progress.
const MIN_LR_MULT: f64 = 1e-8;

/// Optimizer settings. Learning rates are per parameter group; `lr_mean` is
/// additionally scaled by `scene_extent` so translation steps stay
/// proportionate to the scene. A rate of zero freezes its group.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OptimizeConfig {
    pub iterations: usize,
    pub weights: LossWeights,
    pub render: RenderConfig,
    pub with_pose: bool,
    pub with_exposure: bool,
    pub lr_mean: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_pose: f64,
    pub lr_exposure: f64,
    pub scene_extent: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            iterations: 30,
            weights: LossWeights::default(),
            render: RenderConfig::default(),
            with_pose: false,
            with_exposure: false,
            lr_mean: 1.6e-4,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            lr_pose: 1e-4,
            lr_exposure: 1e-3,
            scene_extent: 1.0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid(
                "optimization requires at least one iteration".to_string(),
            ));
        }
        self.weights.validate()?;
        for (name, lr) in [
            ("lr_mean", self.lr_mean),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_opacity", self.lr_opacity),
            ("lr_color", self.lr_color),
            ("lr_pose", self.lr_pose),
            ("lr_exposure", self.lr_exposure),
        ] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative, got {lr}"
                )));
            }
        }
        if !(self.scene_extent > 0.0) || !self.scene_extent.is_finite() {
            return Err(Error::invalid(format!(
                "scene_extent must be positive and finite, got {}",
                self.scene_extent
            )));
        }
        Ok(())
    }
}

/// One render target for the optimizer: the frame whose body pose (and
/// exposure) it reads, the rig camera, and the target buffers.
#[derive(Debug, Clone)]
pub struct OptimizeView {
    pub frame: usize,
    pub cam_from_body: Se3,
    pub intr: Pinhole,
    pub targets: RenderTargets,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    /// Iterations actually executed (accepted and reverted both count).
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss after each iteration, starting with the initial loss;
    /// non-increasing by construction.
    pub loss_trace: Vec<f64>,
}

/// Adam first and second moments for a fixed-size parameter block.
#[derive(Clone)]
struct Moments<const N: usize> {
    m: [f64; N],
    v: [f64; N],
}

impl<const N: usize> Moments<N> {
    fn new() -> Self {
        Moments {
            m: [0.0; N],
            v: [0.0; N],
        }
    }
}

/// One Adam update for a block; returns the step to subtract. `t` is the
/// 1-based accepted-step count for bias correction.
fn adam_step<const N: usize>(
    mom: &mut Moments<N>,
    grad: &[f64; N],
    lrs: &[f64; N],
    lr_mult: f64,
    t: u32,
) -> [f64; N] {
    let b1 = 1.0 - BETA1.powi(t as i32);
    let b2 = 1.0 - BETA2.powi(t as i32);
    let mut step = [0.0; N];
    for i in 0..N {
        mom.m[i] = BETA1 * mom.m[i] + (1.0 - BETA1) * grad[i];
        mom.v[i] = BETA2 * mom.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
        let mh = mom.m[i] / b1;
        let vh = mom.v[i] / b2;
        step[i] = lr_mult * lrs[i] * mh / (vh.sqrt() + ADAM_EPS);
    }
    step
}

/// Parameter block order: mean, scale, rotation, opacity, color.
fn pack_grad(g: &GaussGrad) -> [f64; 13] {
    [
        g.mean.x, g.mean.y, g.mean.z, g.scale.x, g.scale.y, g.scale.z, g.rot.x, g.rot.y, g.rot.z,
        g.opacity, g.color.x, g.color.y, g.color.z,
    ]
}

fn gaussian_lrs(cfg: &OptimizeConfig) -> [f64; 13] {
    let m = cfg.lr_mean * cfg.scene_extent;
    [
        m,
        m,
        m,
        cfg.lr_scale,
        cfg.lr_scale,
        cfg.lr_scale,
        cfg.lr_rotation,
        cfg.lr_rotation,
        cfg.lr_rotation,
        cfg.lr_opacity,
        cfg.lr_color,
        cfg.lr_color,
        cfg.lr_color,
    ]
}

fn apply_gaussian_step(g: &mut Gaussian, step: &[f64; 13]) {
    for k in 0..3 {
        g.mean[k] -= step[k];
    }
    for k in 0..3 {
        g.scale[k] = (g.scale[k] - step[3 + k]).max(MIN_SCALE);
    }
    let rot = Vector3::new(step[6], step[7], step[8]);
    g.orientation = g.orientation * UnitQuaternion::from_scaled_axis(-rot);
    g.opacity = (g.opacity - step[9]).clamp(OPACITY_MIN, OPACITY_MAX);
    for k in 0..3 {
        g.color[k] = (g.color[k] - step[10 + k]).clamp(0.0, 1.0);
    }
}

fn total_loss(
    map: &GaussianMap,
    views: &[OptimizeView],
    poses: &BTreeMap<usize, Se3>,
    exposures: &BTreeMap<usize, Matrix3x4<f64>>,
    cfg: &OptimizeConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for v in views {
        let view = View::for_camera(&poses[&v.frame], &v.cam_from_body, v.intr);
        let out = render(map, &view, &cfg.render);
        total += map_loss(&out, map, &v.targets, &cfg.weights, exposures.get(&v.frame))?.total;
    }
    Ok(total)
}

/// Optimizes the map (and optionally poses and exposures) against the given
/// views for a fixed number of guarded Adam iterations.
///
/// `poses` must contain every frame referenced by `views`; with
/// `with_exposure` set, missing exposure entries are seeded with the
/// identity, which leaves the loss bit-identical until the first step.
pub fn optimize_map(
    map: &mut GaussianMap,
    views: &[OptimizeView],
    poses: &mut BTreeMap<usize, Se3>,
    exposures: &mut BTreeMap<usize, Matrix3x4<f64>>,
    cfg: &OptimizeConfig,
) -> Result<OptimizeReport> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::invalid(
            "optimization requires at least one view".to_string(),
        ));
    }
    for v in views {
        if !poses.contains_key(&v.frame) {
            return Err(Error::invalid(format!(
                "view references frame {} with no pose",
                v.frame
            )));
        }
    }
    if cfg.with_exposure {
        for v in views {
            exposures.entry(v.frame).or_insert_with(identity_exposure);
        }
    }

    let initial = total_loss(map, views, poses, exposures, cfg)?;
    if !initial.is_finite() {
        return Err(Error::Optimization(format!(
            "initial loss is not finite: {initial} over {} views, {} gaussians",
            views.len(),
            map.len()
        )));
    }

    let lrs = gaussian_lrs(cfg);
    let pose_lrs = [cfg.lr_pose; 6];
    let expo_lrs = [cfg.lr_exposure; 12];

    let mut gauss_mom: BTreeMap<u64, Moments<13>> = BTreeMap::new();
    let mut pose_mom: BTreeMap<usize, Moments<6>> = BTreeMap::new();
    let mut expo_mom: BTreeMap<usize, Moments<12>> = BTreeMap::new();

    let mut current = initial;
    let mut trace = vec![initial];
    let mut lr_mult = 1.0;
    let mut t: u32 = 0;

    for _ in 0..cfg.iterations {
        // Gradients at the current state, accumulated over all views.
        let mut gauss_grads: BTreeMap<u64, [f64; 13]> = BTreeMap::new();
        let mut pose_grads: BTreeMap<usize, Vector6<f64>> = BTreeMap::new();
        let mut expo_grads: BTreeMap<usize, [f64; 12]> = BTreeMap::new();
        for v in views {
            let view = View::for_camera(&poses[&v.frame], &v.cam_from_body, v.intr);
            let out = render(map, &view, &cfg.render);
            let grads = loss_backward(
                map,
                &view,
                &out,
                &v.targets,
                &cfg.weights,
                exposures.get(&v.frame),
                &cfg.render,
            )?;
            for (id, g) in &grads.gaussians {
                let packed = pack_grad(g);
                let slot = gauss_grads.entry(*id).or_insert([0.0; 13]);
                for k in 0..13 {
                    slot[k] += packed[k];
                }
            }
            if cfg.with_pose {
                *pose_grads.entry(v.frame).or_insert_with(Vector6::zeros) += grads.pose;
            }
            if cfg.with_exposure {
                let slot = expo_grads.entry(v.frame).or_insert([0.0; 12]);
                for r in 0..3 {
                    for c in 0..4 {
                        slot[r * 4 + c] += grads.exposure[(r, c)];
                    }
                }
            }
        }

        let snapshot = (map.clone(), poses.clone(), exposures.clone());

        t += 1;
        for (id, grad) in &gauss_grads {
            let mom = gauss_mom.entry(*id).or_insert_with(Moments::new);
            let step = adam_step(mom, grad, &lrs, lr_mult, t);
            if let Some(g) = map.get_mut(*id) {
                apply_gaussian_step(g, &step);
            }
        }
        for (frame, grad) in &pose_grads {
            let mom = pose_mom.entry(*frame).or_insert_with(Moments::new);
            let garr = [grad[0], grad[1], grad[2], grad[3], grad[4], grad[5]];
            let step = adam_step(mom, &garr, &pose_lrs, lr_mult, t);
            let dxi = Vector6::new(
                -step[0], -step[1], -step[2], -step[3], -step[4], -step[5],
            );
            let pose = poses.get_mut(frame).expect("frames checked above");
            *pose = pose.retract(&dxi);
        }
        for (frame, grad) in &expo_grads {
            let mom = expo_mom.entry(*frame).or_insert_with(Moments::new);
            let step = adam_step(mom, grad, &expo_lrs, lr_mult, t);
            let a = exposures.get_mut(frame).expect("seeded above");
            for r in 0..3 {
                for c in 0..4 {
                    a[(r, c)] -= step[r * 4 + c];
                }
            }
        }

        let new_loss = total_loss(map, views, poses, exposures, cfg)?;
        if !new_loss.is_finite() {
            let tail_start = trace.len().saturating_sub(5);
            return Err(Error::Optimization(format!(
                "loss became non-finite ({new_loss}) at iteration {}; recent losses {:?}",
                trace.len(),
                &trace[tail_start..]
            )));
        }

        if new_loss > current {
            // Roll back and flush the moments: a retried step with stale
            // momentum can point uphill no matter how short, while a pure
            // gradient step is a descent direction and must eventually be
            // accepted as the multiplier shrinks.
            let (m0, p0, e0) = snapshot;
            *map = m0;
            *poses = p0;
            *exposures = e0;
            gauss_mom.clear();
            pose_mom.clear();
            expo_mom.clear();
            t = 0;
            lr_mult *= 0.5;
            trace.push(current);
            if lr_mult < MIN_LR_MULT {
                break;
            }
        } else {
            current = new_loss;
            lr_mult = (lr_mult * 1.2).min(1.0);
            trace.push(current);
        }
    }

    Ok(OptimizeReport {
        iterations: trace.len() - 1,
        initial_loss: initial,
        final_loss: current,
        loss_trace: trace,
    })
}
