//! Front-to-back alpha compositing of projected Gaussians.
//!
//! The tiled renderer and the brute-force reference share one per-pixel
//! compositing routine; the only difference is which Gaussians each pixel
//! ever sees. The tile path culls by a conservative bounding box of the
//! cutoff ellipse, so culled Gaussians are exactly those the reference path
//! would reject by the Mahalanobis test anyway, and the two outputs are
//! bitwise identical.

use std::collections::BTreeSet;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{Pinhole, Se3};
use crate::gsmap::GaussianMap;
use crate::io::Raster;

use super::project::{project_gaussian, ray_quadric_nearest, ProjectedGaussian};

/// Compositing thresholds. The defaults are production values; the
/// `permissive` preset disables every cutoff so that the output is smooth in
/// the parameters, which finite-difference tests require.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RenderConfig {
    /// Isotropic floor added to every 2D footprint covariance, in px^2.
    pub eps2d: f64,
    /// Squared Mahalanobis cutoff; contributions beyond it are dropped.
    pub kappa2: f64,
    /// Upper clamp on per-pixel alpha, keeping transmittance positive.
    pub alpha_clamp: f64,
    /// Contributions below this alpha are skipped.
    pub alpha_skip: f64,
    /// Traversal stops once transmittance falls below this.
    pub t_min: f64,
    /// Tile edge in pixels.
    pub tile: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            eps2d: 0.3,
            kappa2: 9.0,
            alpha_clamp: 0.99,
            alpha_skip: 1e-4,
            t_min: 1e-4,
            tile: 16,
        }
    }
}

impl RenderConfig {
    /// All cutoffs disabled; every projected Gaussian contributes to every
    /// pixel with its exact smooth weight.
    pub fn permissive() -> Self {
        RenderConfig {
            eps2d: 0.3,
            kappa2: f64::INFINITY,
            alpha_clamp: 1.0,
            alpha_skip: 0.0,
            t_min: 0.0,
            tile: 16,
        }
    }
}

/// One camera of one keyframe as a render target.
#[derive(Debug, Clone)]
pub struct View {
    pub cam_from_world: Se3,
    pub intr: Pinhole,
}

impl View {
    /// Builds the view for a rig camera: `(body_pose * cam_from_body)^-1`.
    pub fn for_camera(body_pose: &Se3, cam_from_body: &Se3, intr: Pinhole) -> View {
        View {
            cam_from_world: body_pose.compose(cam_from_body).inverse(),
            intr,
        }
    }
}

/// One Gaussian's contribution to one pixel, retained for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct Contributor {
    pub id: u64,
    /// Per-pixel alpha after the clamp.
    pub alpha: f64,
    /// `alpha` times the transmittance in front of this contributor.
    pub weight: f64,
}

/// Rendered buffers plus everything the backward pass replays. Buffers are
/// `f64` row-major; convert with the `*_raster` methods for I/O.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    pub color: Vec<Vector3<f64>>,
    /// Blended z-depth, 0 where nothing rendered.
    pub depth: Vec<f64>,
    /// Renormalized world-frame normal, 0 where nothing rendered.
    pub normal: Vec<Vector3<f64>>,
    /// Accumulated blend weight per pixel, in [0, 1].
    pub coverage: Vec<f64>,
    pub contributors: Vec<Vec<Contributor>>,
}

impl RenderOutput {
    pub fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    /// Ids that contributed anywhere in this render, ascending.
    pub fn visible_ids(&self) -> BTreeSet<u64> {
        self.contributors
            .iter()
            .flat_map(|c| c.iter().map(|con| con.id))
            .collect()
    }

    pub fn color_raster(&self) -> Raster {
        let mut r = Raster::new(self.width, self.height, 3);
        for (i, c) in self.color.iter().enumerate() {
            let base = i * 3;
            r.data_mut()[base] = c.x as f32;
            r.data_mut()[base + 1] = c.y as f32;
            r.data_mut()[base + 2] = c.z as f32;
        }
        r
    }

    pub fn depth_raster(&self) -> Raster {
        let mut r = Raster::new(self.width, self.height, 1);
        for (i, d) in self.depth.iter().enumerate() {
            r.data_mut()[i] = *d as f32;
        }
        r
    }

    pub fn normal_raster(&self) -> Raster {
        let mut r = Raster::new(self.width, self.height, 3);
        for (i, n) in self.normal.iter().enumerate() {
            let base = i * 3;
            r.data_mut()[base] = n.x as f32;
            r.data_mut()[base + 1] = n.y as f32;
            r.data_mut()[base + 2] = n.z as f32;
        }
        r
    }

    pub fn coverage_raster(&self) -> Raster {
        let mut r = Raster::new(self.width, self.height, 1);
        for (i, c) in self.coverage.iter().enumerate() {
            r.data_mut()[i] = *c as f32;
        }
        r
    }
}

/// Norm below which a composited normal is treated as absent.
pub(crate) const NORMAL_EPS: f64 = 1e-12;

pub(crate) struct PixelResult {
    pub color: Vector3<f64>,
    pub depth: f64,
    pub normal: Vector3<f64>,
    pub coverage: f64,
    pub contribs: Vec<Contributor>,
}

/// Front-to-back composite of one pixel over Gaussians already sorted by
/// (mean z, id). Shared verbatim by the tiled and reference renderers.
pub(crate) fn composite_pixel<'a>(
    px: Vector2<f64>,
    intr: &Pinhole,
    gaussians: impl Iterator<Item = &'a ProjectedGaussian>,
    cfg: &RenderConfig,
) -> PixelResult {
    let ray = intr.ray_dir(&px);
    let dir = ray / ray.norm();
    let mut color = Vector3::zeros();
    let mut depth = 0.0;
    let mut normal = Vector3::zeros();
    let mut coverage = 0.0;
    let mut contribs = Vec::new();
    let mut transmittance = 1.0;
    for p in gaussians {
        if transmittance < cfg.t_min {
            break;
        }
        let delta = px - p.mean_px;
        let qd = p.inv_cov2d * delta;
        let maha = delta.dot(&qd);
        if !(maha <= cfg.kappa2) {
            continue;
        }
        let alpha = (p.opacity * (-0.5 * maha).exp()).min(cfg.alpha_clamp);
        if alpha <= 0.0 || alpha < cfg.alpha_skip {
            continue;
        }
        let weight = alpha * transmittance;
        let d_i = match ray_quadric_nearest(&p.inv_cov_cam, &p.mean_cam, &dir) {
            Some(t) => t * dir.z,
            None => p.mean_cam.z,
        };
        color += weight * p.color;
        depth += weight * d_i;
        normal += weight * p.normal_world;
        coverage += weight;
        contribs.push(Contributor {
            id: p.id,
            alpha,
            weight,
        });
        transmittance *= 1.0 - alpha;
    }
    let normal = if normal.norm() > NORMAL_EPS {
        normal.normalize()
    } else {
        Vector3::zeros()
    };
    PixelResult {
        color,
        depth,
        normal,
        coverage,
        contribs,
    }
}

/// Projects the whole map into a view, keeping valid footprints in ascending
/// id order.
pub(crate) fn project_visible(
    map: &GaussianMap,
    view: &View,
    cfg: &RenderConfig,
) -> Vec<ProjectedGaussian> {
    map.iter()
        .map(|(id, g)| project_gaussian(id, g, &view.cam_from_world, &view.intr, cfg))
        .filter(|p| p.valid)
        .collect()
}

/// Indices into `projected` sorted by (mean camera z, id).
pub(crate) fn depth_order(projected: &[ProjectedGaussian]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..projected.len()).collect();
    order.sort_by(|&a, &b| {
        projected[a]
            .mean_cam
            .z
            .partial_cmp(&projected[b].mean_cam.z)
            .expect("projection rejects non-finite depths")
            .then(projected[a].id.cmp(&projected[b].id))
    });
    order
}

fn empty_output(width: u32, height: u32) -> RenderOutput {
    let n = (width * height) as usize;
    RenderOutput {
        width,
        height,
        color: vec![Vector3::zeros(); n],
        depth: vec![0.0; n],
        normal: vec![Vector3::zeros(); n],
        coverage: vec![0.0; n],
        contributors: vec![Vec::new(); n],
    }
}

/// Tiled renderer. Tiles are processed in parallel over an immutable
/// projected snapshot and scattered back in tile order, so the output is
/// identical for any worker count.
pub fn render(map: &GaussianMap, view: &View, cfg: &RenderConfig) -> RenderOutput {
    let (w, h) = (view.intr.width, view.intr.height);
    let projected = project_visible(map, view, cfg);
    let order = depth_order(&projected);

    let tile = cfg.tile.max(1);
    let nx = w.div_ceil(tile);
    let ny = h.div_ceil(tile);
    let mut tile_lists: Vec<Vec<usize>> = vec![Vec::new(); (nx * ny) as usize];
    for &pi in &order {
        let p = &projected[pi];
        let (tx0, tx1, ty0, ty1) = if p.radius_px.is_finite() {
            let x_lo = (p.mean_px.x - p.radius_px).floor().max(0.0) as u32;
            let x_hi = (p.mean_px.x + p.radius_px).ceil().min((w - 1) as f64) as u32;
            let y_lo = (p.mean_px.y - p.radius_px).floor().max(0.0) as u32;
            let y_hi = (p.mean_px.y + p.radius_px).ceil().min((h - 1) as f64) as u32;
            (x_lo / tile, x_hi / tile, y_lo / tile, y_hi / tile)
        } else {
            (0, nx - 1, 0, ny - 1)
        };
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tile_lists[(ty * nx + tx) as usize].push(pi);
            }
        }
    }

    let tiles: Vec<(u32, u32)> = (0..ny).flat_map(|ty| (0..nx).map(move |tx| (tx, ty))).collect();
    let patches: Vec<Vec<PixelResult>> = tiles
        .par_iter()
        .map(|&(tx, ty)| {
            let list = &tile_lists[(ty * nx + tx) as usize];
            let x1 = ((tx + 1) * tile).min(w);
            let y1 = ((ty + 1) * tile).min(h);
            let mut out = Vec::with_capacity(((x1 - tx * tile) * (y1 - ty * tile)) as usize);
            for y in ty * tile..y1 {
                for x in tx * tile..x1 {
                    out.push(composite_pixel(
                        Vector2::new(x as f64, y as f64),
                        &view.intr,
                        list.iter().map(|&i| &projected[i]),
                        cfg,
                    ));
                }
            }
            out
        })
        .collect();

    let mut out = empty_output(w, h);
    for (&(tx, ty), patch) in tiles.iter().zip(patches) {
        let x1 = ((tx + 1) * tile).min(w);
        let y1 = ((ty + 1) * tile).min(h);
        let mut it = patch.into_iter();
        for y in ty * tile..y1 {
            for x in tx * tile..x1 {
                let px = it.next().expect("patch holds one entry per tile pixel");
                let i = out.idx(x, y);
                out.color[i] = px.color;
                out.depth[i] = px.depth;
                out.normal[i] = px.normal;
                out.coverage[i] = px.coverage;
                out.contributors[i] = px.contribs;
            }
        }
    }
    out
}

/// Deliberately naive reference renderer: every pixel walks the full sorted
/// Gaussian list with no tiling or culling. Kept public as the oracle for
/// equivalence tests and debugging.
pub fn render_reference(map: &GaussianMap, view: &View, cfg: &RenderConfig) -> RenderOutput {
    let (w, h) = (view.intr.width, view.intr.height);
    let projected = project_visible(map, view, cfg);
    let order = depth_order(&projected);
    let mut out = empty_output(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = composite_pixel(
                Vector2::new(x as f64, y as f64),
                &view.intr,
                order.iter().map(|&i| &projected[i]),
                cfg,
            );
            let i = out.idx(x, y);
            out.color[i] = px.color;
            out.depth[i] = px.depth;
            out.normal[i] = px.normal;
            out.coverage[i] = px.coverage;
            out.contributors[i] = px.contribs;
        }
    }
    out
}
