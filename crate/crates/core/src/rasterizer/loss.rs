//! The multi-term mapping loss: photometric, depth, normal, and scale
//! regularization, each an L2 norm (not a squared norm) over its valid
//! domain, combined with non-negative weights.
//!
//! The optional exposure transform is a 3x4 affine color map applied to the
//! rendered color before the photometric residual; the identity transform is
//! a bitwise no-op so that enabling the exposure path without fitting it
//! changes nothing.

use std::collections::BTreeSet;

use nalgebra::{Matrix3x4, Vector3};

use crate::error::{Error, Result};
use crate::gsmap::GaussianMap;
use crate::synth::KeyframeCam;

use super::forward::RenderOutput;

/// Non-negative weights for the four loss terms.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
    pub scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            color: 1.0,
            depth: 0.5,
            normal: 0.1,
            scale: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("color", self.color),
            ("depth", self.depth),
            ("normal", self.normal),
            ("scale", self.scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-term loss values (already weighted) plus their sum.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
    pub scale: f64,
    pub total: f64,
}

/// Rendering targets for one view, in f64 so a render can serve as its own
/// exact target. Depth entries <= 0 and normals below unit norm are invalid
/// and excluded from their terms.
#[derive(Debug, Clone)]
pub struct RenderTargets {
    pub width: u32,
    pub height: u32,
    pub color: Vec<Vector3<f64>>,
    pub depth: Vec<f64>,
    pub normal: Vec<Vector3<f64>>,
}

impl RenderTargets {
    /// Targets from keyframe state: the captured image, the refined depth
    /// (`1 / inv_depth` where valid), and the normal prior.
    pub fn from_keyframe_cam(cam: &KeyframeCam) -> Result<Self> {
        let (w, h) = (cam.image.width(), cam.image.height());
        if cam.image.channels() != 3 || cam.normal_prior.channels() != 3 {
            return Err(Error::invalid(
                "keyframe image and normal prior must be 3-channel".to_string(),
            ));
        }
        if cam.inv_depth.width() != w || cam.inv_depth.height() != h {
            return Err(Error::invalid(
                "keyframe rasters disagree on resolution".to_string(),
            ));
        }
        let n = (w * h) as usize;
        let mut color = Vec::with_capacity(n);
        let mut depth = Vec::with_capacity(n);
        let mut normal = Vec::with_capacity(n);
        for y in 0..h {
            for x in 0..w {
                let px = cam.image.px(x, y);
                color.push(Vector3::new(px[0] as f64, px[1] as f64, px[2] as f64));
                let inv = cam.inv_depth.get(x, y, 0) as f64;
                let valid = cam.inv_valid.get(x, y, 0) > 0.5 && inv > 0.0;
                depth.push(if valid { 1.0 / inv } else { 0.0 });
                let np = cam.normal_prior.px(x, y);
                normal.push(Vector3::new(np[0] as f64, np[1] as f64, np[2] as f64));
            }
        }
        Ok(RenderTargets {
            width: w,
            height: h,
            color,
            depth,
            normal,
        })
    }

    /// Clones a render into targets; useful for fixed-point tests where the
    /// loss must be exactly zero.
    pub fn from_render(out: &RenderOutput) -> Self {
        RenderTargets {
            width: out.width,
            height: out.height,
            color: out.color.clone(),
            depth: out.depth.clone(),
            normal: out.normal.clone(),
        }
    }
}

/// `A [c; 1]` with the multiply written out so the identity matrix is a
/// bitwise no-op on non-negative colors.
pub fn apply_exposure(a: &Matrix3x4<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(
        a[(0, 0)] * c.x + a[(0, 1)] * c.y + a[(0, 2)] * c.z + a[(0, 3)],
        a[(1, 0)] * c.x + a[(1, 1)] * c.y + a[(1, 2)] * c.z + a[(1, 3)],
        a[(2, 0)] * c.x + a[(2, 1)] * c.y + a[(2, 2)] * c.z + a[(2, 3)],
    )
}

/// `[I | 0]`.
pub fn identity_exposure() -> Matrix3x4<f64> {
    Matrix3x4::identity()
}

/// Raw sums shared between the loss and its backward pass.
pub(crate) struct LossSums {
    pub color_ss: f64,
    pub depth_ss: f64,
    pub normal_ss: f64,
    /// Ids that contributed to at least one pixel, ascending.
    pub visible: Vec<u64>,
    /// Mean scale vector over the visible Gaussians.
    pub s_bar: Vector3<f64>,
    pub scale_ss: f64,
}

pub(crate) fn loss_sums(
    out: &RenderOutput,
    map: &GaussianMap,
    targets: &RenderTargets,
    exposure: Option<&Matrix3x4<f64>>,
) -> LossSums {
    let n = out.color.len();
    let mut color_ss = 0.0;
    let mut depth_ss = 0.0;
    let mut normal_ss = 0.0;
    for i in 0..n {
        let rendered = match exposure {
            Some(a) => apply_exposure(a, &out.color[i]),
            None => out.color[i],
        };
        color_ss += (rendered - targets.color[i]).norm_squared();
        if targets.depth[i] > 0.0 {
            let r = out.depth[i] - targets.depth[i];
            depth_ss += r * r;
        }
        if targets.normal[i].norm() > 0.5 && out.normal[i].norm() > 0.5 {
            // Half squared chordal distance, equal to 1 - <n, n_target> for
            // unit vectors but exactly zero when the normals are bitwise
            // identical (the dot-product form rounds to ~1e-16 there, which
            // an L2-norm loss would amplify into an order-one gradient).
            let r = 0.5 * (out.normal[i] - targets.normal[i]).norm_squared();
            normal_ss += r * r;
        }
    }

    let visible: Vec<u64> = out.visible_ids().into_iter().collect();
    let mut s_bar = Vector3::zeros();
    for &id in &visible {
        s_bar += map
            .get(id)
            .expect("render contributors must exist in the map")
            .scale;
    }
    if !visible.is_empty() {
        s_bar /= visible.len() as f64;
    }
    let mut scale_ss = 0.0;
    for &id in &visible {
        scale_ss += (map.get(id).unwrap().scale - s_bar).norm_squared();
    }

    LossSums {
        color_ss,
        depth_ss,
        normal_ss,
        visible,
        s_bar,
        scale_ss,
    }
}

/// Evaluates the mapping loss of a rendered view against its targets.
pub fn map_loss(
    out: &RenderOutput,
    map: &GaussianMap,
    targets: &RenderTargets,
    weights: &LossWeights,
    exposure: Option<&Matrix3x4<f64>>,
) -> Result<LossBreakdown> {
    weights.validate()?;
    if out.width != targets.width || out.height != targets.height {
        return Err(Error::invalid(format!(
            "render is {}x{} but targets are {}x{}",
            out.width, out.height, targets.width, targets.height
        )));
    }
    let sums = loss_sums(out, map, targets, exposure);
    let color = weights.color * sums.color_ss.sqrt();
    let depth = weights.depth * sums.depth_ss.sqrt();
    let normal = weights.normal * sums.normal_ss.sqrt();
    let scale = weights.scale * sums.scale_ss.sqrt();
    Ok(LossBreakdown {
        color,
        depth,
        normal,
        scale,
        total: color + depth + normal + scale,
    })
}

/// Ids visible in a render, exposed for callers that need the scale-term
/// population (e.g. reporting).
pub fn visible_set(out: &RenderOutput) -> BTreeSet<u64> {
    out.visible_ids()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pinhole, Se3};
    use crate::gsmap::Gaussian;
    use crate::rasterizer::forward::{render, RenderConfig, View};
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn view() -> View {
        View {
            cam_from_world: Se3::identity(),
            intr: Pinhole::new(60.0, 60.0, 15.5, 11.5, 32, 24).unwrap(),
        }
    }

    fn scene(equal_scales: bool) -> GaussianMap {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut map = GaussianMap::new();
        for _ in 0..6 {
            let s = if equal_scales {
                // Power of two so the mean over any count is exact and the
                // scale term vanishes bitwise.
                Vector3::new(0.25, 0.25, 0.25)
            } else {
                Vector3::new(
                    rng.gen_range(0.1..0.4),
                    rng.gen_range(0.1..0.4),
                    rng.gen_range(0.1..0.4),
                )
            };
            map.insert(Gaussian {
                mean: Vector3::new(
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(2.0..4.0),
                ),
                scale: s,
                orientation: UnitQuaternion::from_euler_angles(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                opacity: rng.gen_range(0.4..0.8),
                color: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                anchor: 0,
            });
        }
        map
    }

    #[test]
    fn exact_targets_and_equal_scales_give_zero_loss() {
        let map = scene(true);
        let out = render(&map, &view(), &RenderConfig::permissive());
        let targets = RenderTargets::from_render(&out);
        let b = map_loss(&out, &map, &targets, &LossWeights::default(), None).unwrap();
        assert_eq!(b.total, 0.0);
        assert_eq!(b.color, 0.0);
        assert_eq!(b.depth, 0.0);
        assert_eq!(b.normal, 0.0);
        assert_eq!(b.scale, 0.0);
    }

    #[test]
    fn single_pixel_color_error_is_its_norm() {
        let map = scene(true);
        let out = render(&map, &view(), &RenderConfig::permissive());
        let mut targets = RenderTargets::from_render(&out);
        let e = Vector3::new(0.03, -0.04, 0.12);
        targets.color[100] += e;
        let w = LossWeights {
            color: 1.0,
            depth: 0.0,
            normal: 0.0,
            scale: 0.0,
        };
        let b = map_loss(&out, &map, &targets, &w, None).unwrap();
        assert!((b.total - e.norm()).abs() < 1e-12);
    }

    #[test]
    fn identity_exposure_is_bit_exact() {
        let map = scene(false);
        let out = render(&map, &view(), &RenderConfig::default());
        let targets = RenderTargets::from_render(&out);
        let mut targets = targets;
        // Perturb targets so the loss is nonzero and any drift would show.
        for c in targets.color.iter_mut() {
            c.x = (c.x + 0.1).min(1.0);
        }
        let w = LossWeights::default();
        let plain = map_loss(&out, &map, &targets, &w, None).unwrap();
        let ident = map_loss(&out, &map, &targets, &w, Some(&identity_exposure())).unwrap();
        assert_eq!(plain.total.to_bits(), ident.total.to_bits());
    }

    #[test]
    fn exposure_gain_changes_the_color_term_only() {
        let map = scene(true);
        let out = render(&map, &view(), &RenderConfig::default());
        let targets = RenderTargets::from_render(&out);
        let mut a = identity_exposure();
        a[(0, 0)] = 1.3;
        let w = LossWeights::default();
        let with = map_loss(&out, &map, &targets, &w, Some(&a)).unwrap();
        assert!(with.color > 0.0);
        assert_eq!(with.depth, 0.0);
        assert_eq!(with.normal, 0.0);
    }

    #[test]
    fn invalid_depth_targets_are_excluded() {
        let map = scene(true);
        let out = render(&map, &view(), &RenderConfig::default());
        let mut targets = RenderTargets::from_render(&out);
        // Invalidate all depth targets, then corrupt the values: the term
        // must stay zero because nothing is valid.
        for d in targets.depth.iter_mut() {
            *d = 0.0;
        }
        let b = map_loss(&out, &map, &targets, &LossWeights::default(), None).unwrap();
        assert_eq!(b.depth, 0.0);
    }

    #[test]
    fn scale_term_matches_a_hand_computation() {
        let map = scene(false);
        let out = render(&map, &view(), &RenderConfig::permissive());
        let targets = RenderTargets::from_render(&out);
        let w = LossWeights {
            color: 0.0,
            depth: 0.0,
            normal: 0.0,
            scale: 2.0,
        };
        let b = map_loss(&out, &map, &targets, &w, None).unwrap();
        // All six Gaussians are visible under the permissive config.
        let scales: Vec<Vector3<f64>> = map.iter().map(|(_, g)| g.scale).collect();
        assert_eq!(scales.len(), visible_set(&out).len());
        let mean: Vector3<f64> = scales.iter().sum::<Vector3<f64>>() / scales.len() as f64;
        let ss: f64 = scales.iter().map(|s| (s - mean).norm_squared()).sum();
        assert!((b.total - 2.0 * ss.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let map = scene(true);
        let out = render(&map, &view(), &RenderConfig::default());
        let mut targets = RenderTargets::from_render(&out);
        targets.width += 1;
        assert!(map_loss(&out, &map, &targets, &LossWeights::default(), None).is_err());
    }

    #[test]
    fn negative_weights_are_rejected() {
        let w = LossWeights {
            color: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
