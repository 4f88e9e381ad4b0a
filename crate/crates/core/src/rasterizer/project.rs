//! Per-view Gaussian projection and ray-ellipsoid intersection.
//!
//! A world-frame Gaussian becomes an elliptical image footprint by pushing
//! its covariance through the perspective Jacobian at the transformed mean:
//! `cov2d = J Sigma_cam J^T + eps2d I`. The floor `eps2d` (default 0.3 px^2)
//! keeps sub-pixel splats renderable and the footprint inverse finite.
//!
//! Depth values blended by the renderer come from analytically intersecting
//! the viewing ray with the 1-sigma ellipsoid surface, which avoids the bias
//! of using the Gaussian center depth for every pixel it touches.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::geometry::{Pinhole, Se3, Z_MIN};
use crate::gsmap::Gaussian;

use super::forward::RenderConfig;

/// A Gaussian prepared for rendering into one view. All matrices are in the
/// camera frame of that view; `valid` gates everything else.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    pub id: u64,
    /// Footprint center on the image plane.
    pub mean_px: Vector2<f64>,
    /// 2x2 footprint covariance including the `eps2d` floor.
    pub cov2d: Matrix2<f64>,
    pub inv_cov2d: Matrix2<f64>,
    /// Gaussian center in the camera frame; `mean_cam.z` is the sort key and
    /// the fallback depth.
    pub mean_cam: Vector3<f64>,
    /// `M diag(s^2) M^T` with `M = R_cam_world * R_gaussian`.
    pub cov_cam: Matrix3<f64>,
    /// Exact SPD inverse `M diag(s^-2) M^T`.
    pub inv_cov_cam: Matrix3<f64>,
    /// Ellipsoid axes in the camera frame (columns of `M`).
    pub axes_cam: Matrix3<f64>,
    /// World-frame splat normal: shortest ellipsoid axis, flipped toward the
    /// camera.
    pub normal_world: Vector3<f64>,
    /// Which scale component is the shortest (normal) axis.
    pub normal_axis: usize,
    /// +1 or -1, the camera-facing flip applied to the axis.
    pub normal_sign: f64,
    /// Conservative pixel radius of the `kappa2` cutoff ellipse. Infinite
    /// when the cutoff is disabled.
    pub radius_px: f64,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub valid: bool,
}

impl ProjectedGaussian {
    fn invalid(id: u64) -> Self {
        ProjectedGaussian {
            id,
            mean_px: Vector2::zeros(),
            cov2d: Matrix2::identity(),
            inv_cov2d: Matrix2::identity(),
            mean_cam: Vector3::zeros(),
            cov_cam: Matrix3::identity(),
            inv_cov_cam: Matrix3::identity(),
            axes_cam: Matrix3::identity(),
            normal_world: Vector3::zeros(),
            normal_axis: 0,
            normal_sign: 1.0,
            radius_px: 0.0,
            opacity: 0.0,
            color: Vector3::zeros(),
            valid: false,
        }
    }
}

/// Index of the smallest component, lowest index on ties.
fn shortest_axis(s: &Vector3<f64>) -> usize {
    if s.x <= s.y && s.x <= s.z {
        0
    } else if s.y <= s.z {
        1
    } else {
        2
    }
}

/// Projects one Gaussian into a view. Invalid when the center is behind the
/// camera or the whole cutoff ellipse lies off-screen.
pub fn project_gaussian(
    id: u64,
    g: &Gaussian,
    cam_from_world: &Se3,
    intr: &Pinhole,
    cfg: &RenderConfig,
) -> ProjectedGaussian {
    let mean_cam = cam_from_world.transform(&g.mean);
    if mean_cam.z <= Z_MIN {
        return ProjectedGaussian::invalid(id);
    }
    let axes_cam = cam_from_world.rotation_matrix() * g.orientation.to_rotation_matrix().into_inner();
    let d2 = Matrix3::from_diagonal(&g.scale.map(|s| s * s));
    let d2_inv = Matrix3::from_diagonal(&g.scale.map(|s| 1.0 / (s * s)));
    let cov_cam = axes_cam * d2 * axes_cam.transpose();
    let inv_cov_cam = axes_cam * d2_inv * axes_cam.transpose();

    let j = intr.project_jacobian(&mean_cam);
    let cov2d = j * cov_cam * j.transpose() + Matrix2::identity() * cfg.eps2d;
    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return ProjectedGaussian::invalid(id);
    }
    let inv_cov2d = Matrix2::new(c, -b, -b, a) / det;

    let mean_px = intr.project(&mean_cam).pixel;
    let lam_max = 0.5 * (a + c) + ((0.5 * (a - c)).powi(2) + b * b).sqrt();
    let radius_px = (cfg.kappa2 * lam_max).sqrt();
    let on_screen = mean_px.x + radius_px >= 0.0
        && mean_px.x - radius_px <= (intr.width - 1) as f64
        && mean_px.y + radius_px >= 0.0
        && mean_px.y - radius_px <= (intr.height - 1) as f64;
    if !on_screen {
        return ProjectedGaussian::invalid(id);
    }

    let normal_axis = shortest_axis(&g.scale);
    let axis_cam: Vector3<f64> = axes_cam.column(normal_axis).into();
    let normal_sign = if axis_cam.dot(&mean_cam) > 0.0 { -1.0 } else { 1.0 };
    let normal_world = g.orientation.to_rotation_matrix().into_inner().column(normal_axis)
        * normal_sign;

    ProjectedGaussian {
        id,
        mean_px,
        cov2d,
        inv_cov2d,
        mean_cam,
        cov_cam,
        inv_cov_cam,
        axes_cam,
        normal_world,
        normal_axis,
        normal_sign,
        radius_px,
        opacity: g.opacity,
        color: g.color,
        valid: true,
    }
}

/// Nearest positive root of `(t d - mu)^T A (t d - mu) = 1` for a normalized
/// direction `d` and a ray through the origin. `A` is the SPD inverse
/// covariance of the ellipsoid. Returns the along-ray distance.
pub(crate) fn ray_quadric_nearest(
    a_mat: &Matrix3<f64>,
    mean: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<f64> {
    let am = a_mat * mean;
    let qa = dir.dot(&(a_mat * dir));
    let qb = -2.0 * dir.dot(&am);
    let qc = mean.dot(&am) - 1.0;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Citardauq-stable pair: q carries the large-magnitude root.
    let q = -0.5 * (qb + qb.signum() * sq);
    let (t0, t1) = if q != 0.0 { (q / qa, qc / q) } else { (0.0, 0.0) };
    let near = t0.min(t1);
    let far = t0.max(t1);
    if near > 0.0 {
        Some(near)
    } else if far > 0.0 {
        Some(far)
    } else {
        None
    }
}

/// Along-ray distance from `origin` to the 1-sigma surface of `g`, or `None`
/// if the ray misses. `dir` must be normalized for the result to be a
/// Euclidean distance.
pub fn ray_ellipsoid_depth(g: &Gaussian, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let m = g.orientation.to_rotation_matrix().into_inner();
    let d2_inv = Matrix3::from_diagonal(&g.scale.map(|s| 1.0 / (s * s)));
    let a = m * d2_inv * m.transpose();
    ray_quadric_nearest(&a, &(g.mean - origin), dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Pinhole {
        Pinhole::new(80.0, 80.0, 31.5, 23.5, 64, 48).unwrap()
    }

    fn gaussian(mean: Vector3<f64>, scale: Vector3<f64>) -> Gaussian {
        Gaussian {
            mean,
            scale,
            orientation: UnitQuaternion::identity(),
            opacity: 0.5,
            color: Vector3::new(0.5, 0.5, 0.5),
            anchor: 0,
        }
    }

    fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian {
        Gaussian {
            mean: Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(1.5..5.0),
            ),
            scale: Vector3::new(
                rng.gen_range(0.05..0.4),
                rng.gen_range(0.05..0.4),
                rng.gen_range(0.05..0.4),
            ),
            orientation: UnitQuaternion::from_euler_angles(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            ),
            opacity: rng.gen_range(0.2..0.9),
            color: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            anchor: 0,
        }
    }

    #[test]
    fn on_axis_isotropic_variance_matches_closed_form() {
        // An isotropic Gaussian on the optical axis at depth z projects to an
        // isotropic footprint with variance (f s / z)^2 + eps2d.
        let cfg = RenderConfig::default();
        let (s, z) = (0.2, 4.0);
        let g = gaussian(Vector3::new(0.0, 0.0, z), Vector3::new(s, s, s));
        let p = project_gaussian(0, &g, &Se3::identity(), &intr(), &cfg);
        assert!(p.valid);
        let want = (80.0 * s / z).powi(2) + cfg.eps2d;
        assert!((p.cov2d[(0, 0)] - want).abs() < 1e-12 * want);
        assert!((p.cov2d[(1, 1)] - want).abs() < 1e-12 * want);
        assert!(p.cov2d[(0, 1)].abs() < 1e-12);
        assert!((p.mean_px - Vector2::new(31.5, 23.5)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_is_invalid() {
        let g = gaussian(Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.1, 0.1, 0.1));
        // Camera rotated 180 degrees about y looks away from the Gaussian.
        let flip = Se3::new(
            UnitQuaternion::from_euler_angles(0.0, std::f64::consts::PI, 0.0),
            Vector3::zeros(),
        );
        let p = project_gaussian(0, &g, &flip, &intr(), &RenderConfig::default());
        assert!(!p.valid);
    }

    #[test]
    fn far_off_screen_is_invalid_but_marginal_is_valid() {
        let cfg = RenderConfig::default();
        let tiny = gaussian(Vector3::new(40.0, 0.0, 2.0), Vector3::new(0.01, 0.01, 0.01));
        assert!(!project_gaussian(0, &tiny, &Se3::identity(), &intr(), &cfg).valid);
        // A huge Gaussian at the same spot still reaches into the image.
        let huge = gaussian(Vector3::new(40.0, 0.0, 2.0), Vector3::new(50.0, 50.0, 50.0));
        assert!(project_gaussian(0, &huge, &Se3::identity(), &intr(), &cfg).valid);
    }

    #[test]
    fn footprint_is_mahalanobis_consistent_with_sampled_projections() {
        // Projection contracts Mahalanobis distance, so every 1-sigma
        // surface point lands inside the unit footprint ellipse; the support
        // point of the ellipsoid along any image direction lands on its
        // boundary to first order. Perspective curvature is O(s/z) here.
        let mut cfg = RenderConfig::default();
        cfg.eps2d = 0.0;
        let intr = intr();
        let z = 5.0;
        let g = Gaussian {
            mean: Vector3::new(0.3, -0.2, z),
            scale: Vector3::new(0.1, 0.07, 0.05),
            orientation: UnitQuaternion::from_euler_angles(0.4, -0.3, 0.9),
            opacity: 0.5,
            color: Vector3::zeros(),
            anchor: 0,
        };
        let p = project_gaussian(0, &g, &Se3::identity(), &intr, &cfg);
        assert!(p.valid);
        let jm = intr.project_jacobian(&p.mean_cam);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..100 {
            let maha2 = if trial % 2 == 0 {
                // Random surface point: contained in the footprint.
                let u = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize();
                let surface = g.mean + p.axes_cam * g.scale.component_mul(&u);
                let delta = intr.project(&surface).pixel - p.mean_px;
                let m = delta.dot(&(p.inv_cov2d * delta));
                assert!(m < 1.0 + 0.05, "surface sample outside footprint: {m}");
                m
            } else {
                // Support point along a random image direction: on the
                // footprint boundary.
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let v = Vector2::new(phi.cos(), phi.sin());
                let pullback = p.cov_cam * (jm.transpose() * v);
                let x = pullback / pullback.dot(&(p.inv_cov_cam * pullback)).sqrt();
                let delta = intr.project(&(p.mean_cam + x)).pixel - p.mean_px;
                let m = delta.dot(&(p.inv_cov2d * delta));
                assert!(
                    (m - 1.0).abs() < 0.05,
                    "support point mahalanobis^2 {m} too far from 1"
                );
                m
            };
            assert!(maha2.is_finite());
        }
    }

    #[test]
    fn camera_frame_inverse_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let g = random_gaussian(&mut rng);
            let p = project_gaussian(0, &g, &Se3::identity(), &intr(), &RenderConfig::permissive());
            assert!(p.valid);
            let eye = p.cov_cam * p.inv_cov_cam;
            assert!((eye - Matrix3::identity()).norm() < 1e-9);
        }
    }

    #[test]
    fn normal_faces_the_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let g = random_gaussian(&mut rng);
            let p = project_gaussian(0, &g, &Se3::identity(), &intr(), &RenderConfig::permissive());
            assert!(p.valid);
            let n_cam: Vector3<f64> = p.axes_cam.column(p.normal_axis) * p.normal_sign;
            assert!(n_cam.dot(&p.mean_cam) <= 0.0);
            assert!((p.normal_world.norm() - 1.0).abs() < 1e-12);
            // Shortest axis really is the shortest.
            let k = p.normal_axis;
            assert!(g.scale[k] <= g.scale[(k + 1) % 3] && g.scale[k] <= g.scale[(k + 2) % 3]);
        }
    }

    #[test]
    fn sphere_chord_depth() {
        // Unit sphere at (0,0,5), ray +z: the near surface is at depth 4.
        let g = gaussian(Vector3::new(0.0, 0.0, 5.0), Vector3::new(1.0, 1.0, 1.0));
        let t = ray_ellipsoid_depth(&g, &Vector3::zeros(), &Vector3::z()).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
    }

    #[test]
    fn tangent_ray_hits_the_tangent_point() {
        // Ray offset laterally by exactly the radius: discriminant zero,
        // single root at the closest-approach distance.
        let g = gaussian(Vector3::new(1.0, 0.0, 5.0), Vector3::new(1.0, 1.0, 1.0));
        let t = ray_ellipsoid_depth(&g, &Vector3::zeros(), &Vector3::z()).unwrap();
        assert!((t - 5.0).abs() < 1e-9);
    }

    #[test]
    fn wide_miss_and_backward_ellipsoids_return_none() {
        let g = gaussian(Vector3::new(3.0, 0.0, 5.0), Vector3::new(1.0, 1.0, 1.0));
        assert!(ray_ellipsoid_depth(&g, &Vector3::zeros(), &Vector3::z()).is_none());
        let behind = gaussian(Vector3::new(0.0, 0.0, -5.0), Vector3::new(1.0, 1.0, 1.0));
        assert!(ray_ellipsoid_depth(&behind, &Vector3::zeros(), &Vector3::z()).is_none());
    }

    #[test]
    fn origin_inside_the_ellipsoid_returns_the_exit() {
        let g = gaussian(Vector3::new(0.0, 0.0, 0.5), Vector3::new(2.0, 2.0, 2.0));
        let t = ray_ellipsoid_depth(&g, &Vector3::zeros(), &Vector3::z()).unwrap();
        assert!((t - 2.5).abs() < 1e-12);
    }

    #[test]
    fn random_rays_agree_with_a_quadratic_scan_oracle() {
        // Oracle: the returned root must satisfy the surface equation to
        // 1e-10, and scanning t in (0, root) must stay strictly outside the
        // ellipsoid (no earlier crossing was skipped).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        for trial in 0..500 {
            let g = random_gaussian(&mut rng);
            let dir = if trial % 2 == 0 {
                // Aim through an interior point: guaranteed hit.
                let u = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize();
                let m = g.orientation.to_rotation_matrix().into_inner();
                let inside = g.mean + m * g.scale.component_mul(&u) * rng.gen_range(0.0..0.8);
                inside.normalize()
            } else {
                // Wide random direction: mostly misses.
                Vector3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    1.0,
                )
                .normalize()
            };
            match ray_ellipsoid_depth(&g, &Vector3::zeros(), &dir) {
                Some(t) => {
                    hits += 1;
                    let u = dir * t - g.mean;
                    let m = g.orientation.to_rotation_matrix().into_inner();
                    let a = m * Matrix3::from_diagonal(&g.scale.map(|s| 1.0 / (s * s)))
                        * m.transpose();
                    let f = u.dot(&(a * u)) - 1.0;
                    assert!(f.abs() < 1e-10, "surface residual {f}");
                    for k in 1..50 {
                        let tt = t * k as f64 / 50.0;
                        let uu = dir * tt - g.mean;
                        assert!(uu.dot(&(a * uu)) - 1.0 > -1e-12);
                    }
                }
                None => {
                    // Miss: the quadratic's minimum over the whole line stays
                    // outside the ellipsoid.
                    let m = g.orientation.to_rotation_matrix().into_inner();
                    let a = m * Matrix3::from_diagonal(&g.scale.map(|s| 1.0 / (s * s)))
                        * m.transpose();
                    let qa = dir.dot(&(a * dir));
                    let t_min = dir.dot(&(a * g.mean)) / qa;
                    let uu = dir * t_min - g.mean;
                    let f_min = uu.dot(&(a * uu)) - 1.0;
                    assert!(f_min > -1e-12, "missed ray actually crosses: {f_min}");
                }
            }
        }
        assert!(hits >= 200, "fixture produced only {hits} hits");
    }
}
