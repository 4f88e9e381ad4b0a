//! Analytic gradients of the mapping loss with respect to every Gaussian
//! parameter, the body pose of the rendered view, and the exposure transform.
//!
//! The backward pass replays each pixel's contributor list from the forward
//! render. Alpha-blending gradients use the standard suffix trick: walking
//! contributors back to front, a running sum accumulates the downstream
//! sensitivity so each alpha gradient costs O(1). Geometry (footprint
//! Mahalanobis terms, ray-ellipsoid hits) is recomputed rather than stored,
//! which keeps the forward output small and is bit-identical because the
//! inputs are identical.
//!
//! Conventions that the optimizer must match:
//! - the Gaussian rotation gradient is taken in the body of the Gaussian,
//!   i.e. with respect to `theta` in `orientation * exp(theta)`;
//! - the pose gradient is the twist `[rho, omega]` of a left perturbation
//!   `exp(xi) * body_pose` of the body pose whose camera produced the view.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x4, Vector2, Vector3, Vector4, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{skew, Pinhole};
use crate::gsmap::GaussianMap;

use super::forward::{RenderConfig, RenderOutput, View, NORMAL_EPS};
use super::loss::{apply_exposure, loss_sums, LossWeights, RenderTargets};
use super::project::{ray_quadric_nearest, ProjectedGaussian};

/// Gradient of the loss with respect to one Gaussian's parameters. `rot` is
/// a body-frame rotation vector (right-multiplied perturbation).
#[derive(Debug, Clone, Default)]
pub struct GaussGrad {
    pub mean: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rot: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

/// All gradients produced by one view's backward pass.
#[derive(Debug, Clone)]
pub struct ViewGradients {
    pub gaussians: BTreeMap<u64, GaussGrad>,
    /// Body-pose twist gradient `[rho, omega]` for `exp(xi) * pose`.
    pub pose: Vector6<f64>,
    /// Gradient of the 3x4 exposure transform.
    pub exposure: Matrix3x4<f64>,
}

/// Per-Gaussian accumulators in the camera frame of the view.
#[derive(Default)]
struct Accum {
    d_mu_px: Vector2<f64>,
    d_cov2d: Matrix2<f64>,
    d_mean_cam: Vector3<f64>,
    d_cov_cam: Matrix3<f64>,
    d_opacity: f64,
    d_color: Vector3<f64>,
    d_normal_w: Vector3<f64>,
}

/// Forward-replay state for one contributor of one pixel.
struct Scratch {
    id: u64,
    alpha: f64,
    weight: f64,
    /// Transmittance in front of this contributor.
    t_k: f64,
    /// Upstream sensitivity to this contributor's blend weight.
    value: f64,
    /// `exp(-maha/2)`, the unclamped density.
    g_exp: f64,
    /// `inv_cov2d * (px - mean_px)`.
    qd: Vector2<f64>,
}

fn frob2(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    a.component_mul(b).sum()
}

fn frob3(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Derivatives of the perspective Jacobian with respect to the camera-frame
/// point, one 2x3 matrix per coordinate.
fn proj_jacobian_derivs(intr: &Pinhole, p: &Vector3<f64>) -> [Matrix2x3<f64>; 3] {
    let z2 = p.z * p.z;
    let z3 = z2 * p.z;
    let dx = Matrix2x3::new(0.0, 0.0, -intr.fx / z2, 0.0, 0.0, 0.0);
    let dy = Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 0.0, -intr.fy / z2);
    let dz = Matrix2x3::new(
        -intr.fx / z2,
        0.0,
        2.0 * intr.fx * p.x / z3,
        0.0,
        -intr.fy / z2,
        2.0 * intr.fy * p.y / z3,
    );
    [dx, dy, dz]
}

fn out_of_sync() -> Error {
    Error::invalid("render output references a Gaussian the map no longer contains".to_string())
}

/// Computes analytic gradients of `map_loss` for one rendered view.
///
/// `out` must come from `render` (or `render_reference`) of exactly this map,
/// view, and config; the contributor lists are replayed against a fresh
/// projection pass.
pub fn loss_backward(
    map: &GaussianMap,
    view: &View,
    out: &RenderOutput,
    targets: &RenderTargets,
    weights: &LossWeights,
    exposure: Option<&Matrix3x4<f64>>,
    cfg: &RenderConfig,
) -> Result<ViewGradients> {
    weights.validate()?;
    if out.width != targets.width || out.height != targets.height {
        return Err(Error::invalid(format!(
            "render is {}x{} but targets are {}x{}",
            out.width, out.height, targets.width, targets.height
        )));
    }
    if out.width != view.intr.width || out.height != view.intr.height {
        return Err(Error::invalid(
            "render resolution disagrees with the view intrinsics".to_string(),
        ));
    }

    let projected: BTreeMap<u64, ProjectedGaussian> =
        super::forward::project_visible(map, view, cfg)
            .into_iter()
            .map(|p| (p.id, p))
            .collect();

    let sums = loss_sums(out, map, targets, exposure);
    let uc_scale = if sums.color_ss > 0.0 {
        weights.color / sums.color_ss.sqrt()
    } else {
        0.0
    };
    let ud_scale = if sums.depth_ss > 0.0 {
        weights.depth / sums.depth_ss.sqrt()
    } else {
        0.0
    };
    let un_scale = if sums.normal_ss > 0.0 {
        weights.normal / sums.normal_ss.sqrt()
    } else {
        0.0
    };
    let us_scale = if sums.scale_ss > 0.0 {
        weights.scale / sums.scale_ss.sqrt()
    } else {
        0.0
    };

    // Left 3x3 block of the exposure, transposed: pulls the pixel gradient
    // back through the affine color map onto the rendered color.
    let a3t: Matrix3<f64> = match exposure {
        Some(a) => a.fixed_view::<3, 3>(0, 0).transpose(),
        None => Matrix3::identity(),
    };

    let mut acc: BTreeMap<u64, Accum> = BTreeMap::new();
    let mut d_exposure = Matrix3x4::zeros();

    for y in 0..out.height {
        for x in 0..out.width {
            let i = (y * out.width + x) as usize;
            let rendered = match exposure {
                Some(a) => apply_exposure(a, &out.color[i]),
                None => out.color[i],
            };
            let u_pix = uc_scale * (rendered - targets.color[i]);
            if uc_scale > 0.0 {
                let cin = Vector4::new(out.color[i].x, out.color[i].y, out.color[i].z, 1.0);
                d_exposure += u_pix * cin.transpose();
            }

            let contribs = &out.contributors[i];
            if contribs.is_empty() {
                continue;
            }

            let u_c = a3t * u_pix;
            let u_d = if ud_scale > 0.0 && targets.depth[i] > 0.0 {
                ud_scale * (out.depth[i] - targets.depth[i])
            } else {
                0.0
            };

            // Raw (pre-normalization) composited normal, replayed in the
            // stored contributor order so it matches the forward pass bit
            // for bit.
            let mut u_til = Vector3::zeros();
            if un_scale > 0.0 && targets.normal[i].norm() > 0.5 {
                let mut ntil = Vector3::zeros();
                for c in contribs {
                    let p = projected.get(&c.id).ok_or_else(out_of_sync)?;
                    ntil += c.weight * p.normal_world;
                }
                let nn = ntil.norm();
                if nn > NORMAL_EPS {
                    let nhat = ntil / nn;
                    let ntar = targets.normal[i];
                    let rn = 0.5 * (nhat - ntar).norm_squared();
                    // (I - nhat nhat^T) / nn applied to rn (nhat - ntar);
                    // the projector annihilates the nhat component.
                    u_til = (un_scale * rn / nn) * (nhat * nhat.dot(&ntar) - ntar);
                }
            }

            if uc_scale == 0.0 && u_d == 0.0 && u_til == Vector3::zeros() {
                continue;
            }

            let px = Vector2::new(x as f64, y as f64);
            let ray = view.intr.ray_dir(&px);
            let dir = ray / ray.norm();
            let vz = dir.z;

            let mut scratch: Vec<Scratch> = Vec::with_capacity(contribs.len());
            let mut trans = 1.0;
            for c in contribs {
                let p = projected.get(&c.id).ok_or_else(out_of_sync)?;
                let delta = px - p.mean_px;
                let qd = p.inv_cov2d * delta;
                let maha = delta.dot(&qd);
                let g_exp = (-0.5 * maha).exp();
                let hit = ray_quadric_nearest(&p.inv_cov_cam, &p.mean_cam, &dir);
                let d_i = match hit {
                    Some(t) => t * vz,
                    None => p.mean_cam.z,
                };
                let value = u_c.dot(&p.color) + u_d * d_i + u_til.dot(&p.normal_world);

                let a = acc.entry(c.id).or_default();
                a.d_color += c.weight * u_c;
                a.d_normal_w += c.weight * u_til;
                if u_d != 0.0 {
                    match hit {
                        Some(t) => {
                            // Implicit differentiation of the surface
                            // equation (t v - mu)^T A (t v - mu) = 1.
                            let u_vec = t * dir - p.mean_cam;
                            let au = p.inv_cov_cam * u_vec;
                            let n_g = 2.0 * au;
                            let denom = n_g.dot(&dir);
                            if denom.abs() > 1e-12 {
                                let f = u_d * c.weight * vz / denom;
                                a.d_mean_cam += f * n_g;
                                a.d_cov_cam += f * (au * au.transpose());
                            }
                        }
                        None => a.d_mean_cam.z += u_d * c.weight,
                    }
                }

                scratch.push(Scratch {
                    id: c.id,
                    alpha: c.alpha,
                    weight: c.weight,
                    t_k: trans,
                    value,
                    g_exp,
                    qd,
                });
                trans *= 1.0 - c.alpha;
            }

            // Alpha gradients back to front. `suffix` holds the accumulated
            // downstream sensitivity sum_{m>k} value_m weight_m; an opaque
            // contributor zeroes every weight behind it, so the suffix is
            // exactly zero there and the division is safely skipped.
            let mut suffix = 0.0;
            for s in scratch.iter().rev() {
                let downstream = if 1.0 - s.alpha > 1e-12 {
                    suffix / (1.0 - s.alpha)
                } else {
                    0.0
                };
                let d_alpha = s.value * s.t_k - downstream;
                suffix += s.value * s.weight;
                if s.alpha < cfg.alpha_clamp {
                    let a = acc.get_mut(&s.id).expect("scratch ids come from acc");
                    a.d_opacity += d_alpha * s.g_exp;
                    let d_maha = -0.5 * s.alpha * d_alpha;
                    a.d_mu_px += -2.0 * d_maha * s.qd;
                    a.d_cov2d += -d_maha * (s.qd * s.qd.transpose());
                }
            }
        }
    }

    // The scale regularizer touches every visible Gaussian, including any
    // whose pixels carried zero upstream gradient.
    for &id in &sums.visible {
        acc.entry(id).or_default();
    }

    let r_p = view.cam_from_world.rotation_matrix();
    let t_p = view.cam_from_world.translation;
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];

    let mut gaussians = BTreeMap::new();
    let mut sum_grho = Vector3::zeros();
    let mut sum_gomega = Vector3::zeros();
    for (id, a) in &acc {
        let p = projected.get(id).ok_or_else(out_of_sync)?;
        let g = map.get(*id).ok_or_else(out_of_sync)?;

        let jm = view.intr.project_jacobian(&p.mean_cam);
        let mut gm = a.d_mean_cam + jm.transpose() * a.d_mu_px;
        let h_cam = a.d_cov_cam + jm.transpose() * a.d_cov2d * jm;

        // The footprint also depends on the center through the perspective
        // Jacobian itself; without this term pose and mean gradients are
        // only first-order accurate.
        let dj = proj_jacobian_derivs(&view.intr, &p.mean_cam);
        let sj = p.cov_cam * jm.transpose();
        for k in 0..3 {
            gm[k] += 2.0 * frob2(&a.d_cov2d, &(dj[k] * sj));
        }

        let mut d_scale = Vector3::zeros();
        for k in 0..3 {
            let mk: Vector3<f64> = p.axes_cam.column(k).into();
            d_scale[k] = 2.0 * g.scale[k] * mk.dot(&(h_cam * mk));
        }
        if us_scale > 0.0 {
            d_scale += us_scale * (g.scale - sums.s_bar);
        }

        // Pairing of the covariance gradient with an infinitesimal camera
        // frame rotation of the axes; reused for both the Gaussian rotation
        // (pulled to its body frame) and the pose.
        let tau = Vector3::new(
            frob3(&h_cam, &(skew(&basis[0]) * p.cov_cam - p.cov_cam * skew(&basis[0]))),
            frob3(&h_cam, &(skew(&basis[1]) * p.cov_cam - p.cov_cam * skew(&basis[1]))),
            frob3(&h_cam, &(skew(&basis[2]) * p.cov_cam - p.cov_cam * skew(&basis[2]))),
        );
        let mut d_rot = p.axes_cam.transpose() * tau;

        // Splat normal chain: the normal is the camera-facing shortest axis
        // in world coordinates, so it feels the Gaussian rotation but not
        // the pose or the scale.
        let r_w = g.orientation.to_rotation_matrix().into_inner();
        d_rot += p.normal_sign * (skew(&basis[p.normal_axis]) * (r_w.transpose() * a.d_normal_w));

        sum_grho -= gm;
        sum_gomega += -p.mean_cam.cross(&gm) - tau;

        gaussians.insert(
            *id,
            GaussGrad {
                mean: r_p.transpose() * gm,
                scale: d_scale,
                rot: d_rot,
                opacity: a.d_opacity,
                color: a.d_color,
            },
        );
    }

    // Camera-frame twist to body twist: the view is cam_from_world = P, a
    // left body perturbation exp(xi) T becomes a right perturbation
    // P exp(-xi), i.e. a left camera perturbation exp(-Ad(P) xi).
    let xi_t = r_p.transpose() * sum_grho;
    let xi_r = r_p.transpose() * (sum_gomega - t_p.cross(&sum_grho));
    let pose = Vector6::new(xi_t.x, xi_t.y, xi_t.z, xi_r.x, xi_r.y, xi_r.z);

    Ok(ViewGradients {
        gaussians,
        pose,
        exposure: d_exposure,
    })
}
