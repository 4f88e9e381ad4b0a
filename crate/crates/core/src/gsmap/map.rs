//! The persistent Gaussian map: creation from keyframes, densification,
//! pruning, and transport under pose updates.
//!
//! Covariances are never stored as raw matrices. Each Gaussian keeps an
//! orientation quaternion and three semi-axis lengths, so the covariance
//! `R diag(s^2) R^T` is symmetric positive definite by construction and
//! stays that way under any sequence of transports.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rig, Se3};
use crate::io::Raster;
use crate::synth::{sample_pixels, Keyframe};

/// One anisotropic Gaussian primitive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gaussian {
    /// World-frame center.
    pub mean: Vector3<f64>,
    /// Ellipsoid semi-axis lengths, all positive.
    pub scale: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    /// Opacity in (0, 1).
    pub opacity: f64,
    /// RGB in [0, 1].
    pub color: Vector3<f64>,
    /// Keyframe that created this Gaussian. Anchoring is permanent.
    pub anchor: usize,
}

impl Gaussian {
    /// `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix().into_inner();
        let d = Matrix3::from_diagonal(&self.scale.map(|s| s * s));
        r * d * r.transpose()
    }
}

/// Parameters for creating Gaussians from a keyframe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitParams {
    /// Pixel stride of the spawn grid (matches the correspondence grid).
    pub stride: u32,
    /// Opacity assigned to new Gaussians.
    pub alpha_init: f64,
    /// Isotropic radius used when fewer than 3 neighbors exist in a batch.
    pub fallback_radius: f64,
    /// Pixels whose accumulated opacity falls below this respawn during
    /// densification.
    pub coverage_min: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        InitParams {
            stride: 4,
            alpha_init: 0.5,
            fallback_radius: 0.05,
            coverage_min: 0.5,
        }
    }
}

/// Growable Gaussian collection with stable, never-reused ids and a
/// per-anchor index.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GaussianMap {
    gaussians: BTreeMap<u64, Gaussian>,
    anchors: BTreeMap<usize, BTreeSet<u64>>,
    /// World position of each anchor keyframe's body origin, kept current
    /// across transports so scale changes have a pivot.
    origins: BTreeMap<usize, Vector3<f64>>,
    next_id: u64,
}

impl GaussianMap {
    pub fn new() -> Self {
        GaussianMap::default()
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Gaussian> {
        self.gaussians.get(&id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut Gaussian> {
        self.gaussians.get_mut(&id)
    }

    /// Ascending-id iteration; every deterministic consumer relies on this
    /// order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &Gaussian)> {
        self.gaussians.iter().map(|(&id, g)| (id, g))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (u64, &mut Gaussian)> {
        self.gaussians.iter_mut().map(|(&id, g)| (id, g))
    }

    /// Ids anchored to a keyframe. Empty set for unknown keyframes.
    pub fn anchored_ids(&self, kf: usize) -> BTreeSet<u64> {
        self.anchors.get(&kf).cloned().unwrap_or_default()
    }

    pub fn anchor_origin(&self, kf: usize) -> Option<Vector3<f64>> {
        self.origins.get(&kf).copied()
    }

    /// Inserts a Gaussian, assigning the next id. The anchor origin must
    /// already be registered (or be registered by the same caller).
    pub fn insert(&mut self, g: Gaussian) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.anchors.entry(g.anchor).or_default().insert(id);
        self.gaussians.insert(id, g);
        id
    }

    /// Back-projects one camera of a keyframe into new Gaussians on the
    /// strided pixel grid. Initial scales are isotropic: the mean distance
    /// to the 3 nearest neighbors within the newly created batch, or
    /// `fallback_radius` when the batch is too small. Returns the new ids.
    pub fn init_from_keyframe(
        &mut self,
        kf: &Keyframe,
        rig: &Rig,
        cam_idx: usize,
        params: &InitParams,
    ) -> Result<Vec<u64>> {
        let coverage = None;
        self.spawn(kf, rig, cam_idx, params, coverage)
    }

    /// Spawns Gaussians at strided pixels whose accumulated opacity in
    /// `coverage` is below `coverage_min`. An all-covered frame adds
    /// nothing; an empty map (zero coverage) reproduces `init_from_keyframe`.
    pub fn densify(
        &mut self,
        kf: &Keyframe,
        rig: &Rig,
        cam_idx: usize,
        coverage: &Raster,
        params: &InitParams,
    ) -> Result<Vec<u64>> {
        self.spawn(kf, rig, cam_idx, params, Some(coverage))
    }

    fn spawn(
        &mut self,
        kf: &Keyframe,
        rig: &Rig,
        cam_idx: usize,
        params: &InitParams,
        coverage: Option<&Raster>,
    ) -> Result<Vec<u64>> {
        if params.stride == 0 {
            return Err(Error::invalid("spawn stride must be positive"));
        }
        if !(params.alpha_init > 0.0 && params.alpha_init < 1.0) {
            return Err(Error::invalid(format!(
                "alpha_init must lie in (0,1), got {}",
                params.alpha_init
            )));
        }
        let cam = rig
            .cameras()
            .get(cam_idx)
            .ok_or_else(|| Error::invalid(format!("camera index {cam_idx} out of range")))?;
        let kc = kf
            .cams
            .get(cam_idx)
            .ok_or_else(|| Error::invalid(format!("keyframe lacks camera {cam_idx}")))?;
        let intr = &cam.intrinsics;
        if let Some(cov) = coverage {
            if cov.width() != intr.width || cov.height() != intr.height {
                return Err(Error::invalid(format!(
                    "coverage raster {}x{} does not match camera image {}x{}",
                    cov.width(),
                    cov.height(),
                    intr.width,
                    intr.height
                )));
            }
        }
        let cam_to_world = kf.pose.compose(&cam.cam_to_body);

        // Collect spawn positions first; scales need the whole batch.
        let mut means = Vec::new();
        let mut colors = Vec::new();
        for (x, y) in sample_pixels(intr.width, intr.height, params.stride) {
            if let Some(cov) = coverage {
                if f64::from(cov.get(x, y, 0)) >= params.coverage_min {
                    continue;
                }
            }
            let inv_d = f64::from(kc.inv_depth.get(x, y, 0));
            let valid = kc.inv_valid.get(x, y, 0) > 0.5;
            if !valid || !(inv_d > 0.0) {
                continue;
            }
            let px = Vector2::new(f64::from(x), f64::from(y));
            let local = intr.backproject(&px, inv_d)?;
            means.push(cam_to_world.transform(&local));
            colors.push(Vector3::new(
                f64::from(kc.image.get(x, y, 0)),
                f64::from(kc.image.get(x, y, 1)),
                f64::from(kc.image.get(x, y, 2)),
            ));
        }

        let radii = batch_radii(&means, params.fallback_radius);
        self.origins.insert(kf.frame_index, kf.pose.translation);

        let mut ids = Vec::with_capacity(means.len());
        for ((mean, color), radius) in means.into_iter().zip(colors).zip(radii) {
            ids.push(self.insert(Gaussian {
                mean,
                scale: Vector3::new(radius, radius, radius),
                orientation: UnitQuaternion::identity(),
                opacity: params.alpha_init,
                color,
                anchor: kf.frame_index,
            }));
        }
        Ok(ids)
    }

    /// Removes every Gaussian with opacity below `alpha_min`. Returns the
    /// removed ids; the per-anchor index is kept consistent.
    pub fn prune(&mut self, alpha_min: f64) -> Vec<u64> {
        let doomed: Vec<u64> = self
            .gaussians
            .iter()
            .filter(|(_, g)| g.opacity < alpha_min)
            .map(|(&id, _)| id)
            .collect();
        for &id in &doomed {
            if let Some(g) = self.gaussians.remove(&id) {
                if let Some(set) = self.anchors.get_mut(&g.anchor) {
                    set.remove(&id);
                    if set.is_empty() {
                        self.anchors.remove(&g.anchor);
                    }
                }
            }
        }
        doomed
    }

    /// Transports every Gaussian anchored to `kf` by the pose delta
    /// `delta` (left-multiplicative: new pose = delta * old pose), with an
    /// optional similarity rescale about the anchor's body origin.
    pub fn apply_pose_update(
        &mut self,
        kf: usize,
        delta: &Se3,
        scale_change: Option<f64>,
    ) -> Result<()> {
        let ids = match self.anchors.get(&kf) {
            Some(set) => set.clone(),
            None => {
                return Err(Error::invalid(format!(
                    "no Gaussians anchored to keyframe {kf}"
                )));
            }
        };
        if let Some(s) = scale_change {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!(
                    "scale change must be positive and finite, got {s}"
                )));
            }
        }
        let identity_delta = delta.rotation.quaternion().coords
            == nalgebra::Vector4::new(0.0, 0.0, 0.0, 1.0)
            && delta.translation == Vector3::zeros();
        if identity_delta && scale_change.is_none() {
            // Bitwise no-op by contract; even multiplying by an exact
            // identity can flip signed zeros.
            return Ok(());
        }

        let origin = self
            .origins
            .get(&kf)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no recorded origin for keyframe {kf}")))?;
        let new_origin = delta.transform(&origin);
        for id in ids {
            let g = self.gaussians.get_mut(&id).expect("index consistent");
            g.mean = delta.transform(&g.mean);
            g.orientation = delta.rotation * g.orientation;
            if let Some(s) = scale_change {
                g.mean = new_origin + (g.mean - new_origin) * s;
                g.scale *= s;
            }
        }
        self.origins.insert(kf, new_origin);
        Ok(())
    }
}

/// Isotropic radius per point: mean distance to the 3 nearest other points
/// in the batch, or the fallback when fewer than 3 exist. Brute force; spawn
/// batches are a few hundred points.
fn batch_radii(means: &[Vector3<f64>], fallback: f64) -> Vec<f64> {
    let n = means.len();
    if n < 4 {
        return vec![fallback; n];
    }
    let mut radii = Vec::with_capacity(n);
    for i in 0..n {
        // Three smallest squared distances, maintained by insertion.
        let mut best = [f64::INFINITY; 3];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d2 = (means[i] - means[j]).norm_squared();
            if d2 < best[2] {
                best[2] = d2;
                if best[2] < best[1] {
                    best.swap(1, 2);
                }
                if best[1] < best[0] {
                    best.swap(0, 1);
                }
            }
        }
        radii.push(best.iter().map(|d2| d2.sqrt()).sum::<f64>() / 3.0);
    }
    radii
}
