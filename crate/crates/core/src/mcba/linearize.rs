//! Gauss-Newton linearization of the bundle adjustment cost.
//!
//! The normal equations keep the natural two-block structure of the problem:
//! a dense pose block `B` (free poses only, 6 degrees of freedom each), a
//! diagonal depth block `C` (each correspondence source pixel owns one
//! inverse depth), and the sparse pose-depth coupling `E` stored per depth
//! column. Pose Jacobians use a left-multiplicative perturbation, so the
//! solved increment is applied as `T <- exp(dxi) * T`.
//!
//! Derivation sketch for a temporal edge: with `Y` the world point of a
//! source sample and `G = ext_j^-1 * T_j^-1` the world-to-target-camera map,
//! perturbing pose i moves the target-camera point by
//! `R_G * (drho + dtheta x Y)`, and perturbing pose j by the exact negative.
//! Chaining through the projection Jacobian gives the 2x6 blocks below.
//! Cross-view edges do not involve the body poses at all and contribute
//! depth curvature only.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3x6, Vector2, Vector6};

use crate::error::{Error, Result};
use crate::geometry::skew;
use crate::mcba::problem::BaProblem;
use crate::mcba::residual::{edge_geometry, robust_multiplier};

/// Sparse normal equations `[B E; E^T C] [dxi; dd] = [v; w]`, undamped.
/// Damping is supplied at solve time so one linearization can be reused
/// across Levenberg retries.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    /// Free pose indices in ascending order; slot `s` of the pose vector
    /// corresponds to `free[s]`.
    pub free: Vec<usize>,
    /// Dense pose Hessian, `6k x 6k` for `k` free poses.
    pub b: DMatrix<f64>,
    /// Pose-depth coupling, one sparse column per depth variable holding
    /// `(pose slot, 6-block)` pairs.
    pub e_blocks: Vec<Vec<(usize, Vector6<f64>)>>,
    /// Depth Hessian diagonal.
    pub c: DVector<f64>,
    /// Pose-side gradient `J_pose^T W r`.
    pub v: DVector<f64>,
    /// Depth-side gradient `J_depth^T W r`.
    pub w: DVector<f64>,
}

impl NormalEquations {
    pub fn n_pose_dof(&self) -> usize {
        self.free.len() * 6
    }

    /// Densifies `E` (pose dof rows, depth columns). Test and debugging aid;
    /// the solver never materializes this.
    pub fn e_dense(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n_pose_dof(), self.c.len());
        for (d, blocks) in self.e_blocks.iter().enumerate() {
            for (slot, u) in blocks {
                for k in 0..6 {
                    e[(slot * 6 + k, d)] += u[k];
                }
            }
        }
        e
    }

    /// Assembles the full damped system as one dense matrix and right-hand
    /// side. Oracle for the Schur-complement solver.
    pub fn full_dense(&self, lambda: f64) -> (DMatrix<f64>, DVector<f64>) {
        let np = self.n_pose_dof();
        let nd = self.c.len();
        let mut h = DMatrix::zeros(np + nd, np + nd);
        h.view_mut((0, 0), (np, np)).copy_from(&self.b);
        let e = self.e_dense();
        h.view_mut((0, np), (np, nd)).copy_from(&e);
        h.view_mut((np, 0), (nd, np)).copy_from(&e.transpose());
        for d in 0..nd {
            h[(np + d, np + d)] = self.c[d];
        }
        for i in 0..np + nd {
            h[(i, i)] += lambda;
        }
        let mut rhs = DVector::zeros(np + nd);
        rhs.view_mut((0, 0), (np, 1)).copy_from(&self.v);
        rhs.view_mut((np, 0), (nd, 1)).copy_from(&self.w);
        (h, rhs)
    }
}

/// Builds the normal equations at the problem's current estimates.
/// Reprojections that fall outside the target view are skipped, matching the
/// cost definition. Any non-finite residual or Jacobian entry aborts with an
/// error naming the offending edge.
pub fn linearize(problem: &BaProblem, huber: Option<f64>) -> Result<NormalEquations> {
    let free = problem.free_poses();
    let mut slot_of = vec![None; problem.poses.len()];
    for (slot, &idx) in free.iter().enumerate() {
        slot_of[idx] = Some(slot);
    }
    let np = free.len() * 6;
    let nd = problem.depths.len();
    let mut b = DMatrix::zeros(np, np);
    let mut e_blocks: Vec<Vec<(usize, Vector6<f64>)>> = vec![Vec::new(); nd];
    let mut c = DVector::zeros(nd);
    let mut v = DVector::zeros(np);
    let mut w = DVector::zeros(nd);

    for edge_idx in 0..problem.edges.len() {
        let edge = &problem.edges[edge_idx];
        let key = &edge.key;
        let geom = edge_geometry(problem, edge_idx)?;
        let intr_i = &problem.rig.camera(key.cam_i)?.intrinsics;
        let intr_j = &problem.rig.camera(key.cam_j)?.intrinsics;
        let r_that = geom.t_hat.rotation_matrix();
        // World pose of the source camera, used for the world-point lever arm
        // of the pose Jacobians.
        let cam_i_to_world =
            problem.poses[key.kf_i].compose(&problem.rig.camera(key.cam_i)?.cam_to_body);
        let r_g = geom.world_to_target.rotation_matrix();
        let slot_i = slot_of[key.kf_i];
        let slot_j = slot_of[key.kf_j];

        for (sample_idx, sample) in edge.samples.iter().enumerate() {
            let d = problem.depths[sample.depth_var];
            let dir = intr_i.ray_dir(&sample.src_px);
            let point_i = dir / d;
            let point_j = geom.t_hat.transform(&point_i);
            let proj = intr_j.project(&point_j);
            if !proj.valid {
                continue;
            }
            let r = sample.target_px - proj.pixel;
            let jpi = intr_j.project_jacobian(&point_j);
            let rho = robust_multiplier(&r, &sample.weight, huber);
            let wx = sample.weight.x * rho;
            let wy = sample.weight.y * rho;

            // Depth derivative: d(point_j)/dd = -R(T_hat) * dir / d^2.
            let j_d3 = r_that * dir * (-1.0 / (d * d));
            let j_d = jpi * j_d3;
            if !(r.x.is_finite() && r.y.is_finite() && j_d.x.is_finite() && j_d.y.is_finite()) {
                return Err(Error::Linearization {
                    edge: key.to_string(),
                    msg: format!("non-finite residual or depth Jacobian at sample {sample_idx}"),
                });
            }
            let dv = sample.depth_var;
            c[dv] += wx * j_d.x * j_d.x + wy * j_d.y * j_d.y;
            w[dv] += wx * j_d.x * r.x + wy * j_d.y * r.y;

            if !geom.pose_dependent || (slot_i.is_none() && slot_j.is_none()) {
                continue;
            }
            let y = cam_i_to_world.transform(&point_i);
            let mut m = Matrix3x6::zeros();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_g);
            m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r_g * skew(&y)));
            // 2x6 projection derivative with respect to a perturbation of
            // pose i; pose j is its exact negative.
            let j_pose = jpi * m;
            if j_pose.iter().any(|x| !x.is_finite()) {
                return Err(Error::Linearization {
                    edge: key.to_string(),
                    msg: format!("non-finite pose Jacobian at sample {sample_idx}"),
                });
            }
            let jtw = j_pose.transpose() * Matrix2::from_diagonal(&Vector2::new(wx, wy));
            let h_ii = jtw * j_pose;
            let g_i = jtw * r;
            let e_i = jtw * j_d;

            if let Some(si) = slot_i {
                let mut blk = b.fixed_view_mut::<6, 6>(si * 6, si * 6);
                blk += h_ii;
                for k in 0..6 {
                    v[si * 6 + k] += g_i[k];
                }
                push_block(&mut e_blocks[dv], si, e_i);
            }
            if let Some(sj) = slot_j {
                let mut blk = b.fixed_view_mut::<6, 6>(sj * 6, sj * 6);
                blk += h_ii;
                for k in 0..6 {
                    v[sj * 6 + k] -= g_i[k];
                }
                push_block(&mut e_blocks[dv], sj, -e_i);
            }
            if let (Some(si), Some(sj)) = (slot_i, slot_j) {
                // Off-diagonal coupling J_i^T W J_j = -h_ii (J_j = -J_i).
                let mut blk = b.fixed_view_mut::<6, 6>(si * 6, sj * 6);
                blk -= h_ii;
                let mut blk = b.fixed_view_mut::<6, 6>(sj * 6, si * 6);
                blk -= h_ii.transpose();
            }
        }
    }

    Ok(NormalEquations { free, b, e_blocks, c, v, w })
}

/// Adds a 6-block into a sparse depth column, merging with an existing entry
/// for the same pose slot so columns stay short.
fn push_block(column: &mut Vec<(usize, Vector6<f64>)>, slot: usize, block: Vector6<f64>) {
    for (s, u) in column.iter_mut() {
        if *s == slot {
            *u += block;
            return;
        }
    }
    column.push((slot, block));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Se3;
    use crate::mcba::residual::problem_cost;
    use crate::mcba::residual::tests::exact_problem_with_truth;
    use nalgebra::Vector3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FD_STEP: f64 = 1e-6;
    const FD_REL_TOL: f64 = 1e-5;

    /// Perturbs the exact problem so residuals are non-zero but all samples
    /// stay comfortably inside the target views, keeping finite differences
    /// free of validity flips.
    fn perturbed_problem() -> BaProblem {
        let mut problem = exact_problem_with_truth(3, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (idx, pose) in problem.poses.iter_mut().enumerate() {
            if problem.fixed.contains(&idx) {
                continue;
            }
            let mut xi = [0.0; 6];
            for x in xi.iter_mut() {
                *x = rng.gen_range(-1.0..1.0) * 2e-3;
            }
            *pose = pose.retract(&Vector6::from_row_slice(&xi));
        }
        for d in problem.depths.iter_mut() {
            *d *= 1.0 + rng.gen_range(-1.0..1.0) * 5e-3;
        }
        // Drop samples whose perturbed reprojection sits within a pixel of
        // the image border; their validity could flip under the FD probe.
        let keep_margin = 1.0;
        for edge_idx in 0..problem.edges.len() {
            let geom = crate::mcba::residual::edge_geometry(&problem, edge_idx).unwrap();
            let key = problem.edges[edge_idx].key;
            let intr_i = problem.rig.camera(key.cam_i).unwrap().intrinsics.clone();
            let intr_j = problem.rig.camera(key.cam_j).unwrap().intrinsics.clone();
            let depths = problem.depths.clone();
            problem.edges[edge_idx].samples.retain(|s| {
                let dir = intr_i.ray_dir(&s.src_px);
                let p_j = geom.t_hat.transform(&(dir / depths[s.depth_var]));
                let proj = intr_j.project(&p_j);
                proj.valid
                    && proj.pixel.x > keep_margin
                    && proj.pixel.y > keep_margin
                    && proj.pixel.x < f64::from(intr_j.width - 1) - keep_margin
                    && proj.pixel.y < f64::from(intr_j.height - 1) - keep_margin
            });
        }
        problem
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let problem = perturbed_problem();
        let eq = linearize(&problem, None).unwrap();
        assert!(!eq.free.is_empty());

        // The cost gradient along pose axis a of free pose s is -2 v[s*6+a].
        let mut max_rel = 0.0_f64;
        for (slot, &pose_idx) in eq.free.iter().enumerate() {
            for axis in 0..6 {
                let mut step = Vector6::zeros();
                step[axis] = FD_STEP;
                let mut plus = problem.clone();
                plus.poses[pose_idx] = problem.poses[pose_idx].retract(&step);
                let mut minus = problem.clone();
                minus.poses[pose_idx] = problem.poses[pose_idx].retract(&(-step));
                let fd = (problem_cost(&plus, None).unwrap()
                    - problem_cost(&minus, None).unwrap())
                    / (2.0 * FD_STEP);
                let analytic = -2.0 * eq.v[slot * 6 + axis];
                let scale = analytic.abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max((fd - analytic).abs() / scale);
            }
        }
        assert!(max_rel < FD_REL_TOL, "pose gradient rel err {max_rel:.3e}");

        // Depth gradients, spot-checked on a deterministic subset.
        let mut max_rel_d = 0.0_f64;
        let stride = (problem.depths.len() / 25).max(1);
        for dv in (0..problem.depths.len()).step_by(stride) {
            let mut plus = problem.clone();
            plus.depths[dv] += FD_STEP;
            let mut minus = problem.clone();
            minus.depths[dv] -= FD_STEP;
            let fd = (problem_cost(&plus, None).unwrap() - problem_cost(&minus, None).unwrap())
                / (2.0 * FD_STEP);
            let analytic = -2.0 * eq.w[dv];
            let scale = analytic.abs().max(fd.abs()).max(1e-6);
            max_rel_d = max_rel_d.max((fd - analytic).abs() / scale);
        }
        assert!(max_rel_d < FD_REL_TOL, "depth gradient rel err {max_rel_d:.3e}");
    }

    #[test]
    fn hessian_blocks_are_symmetric_and_nonnegative() {
        let problem = perturbed_problem();
        let eq = linearize(&problem, None).unwrap();
        let asym = (&eq.b - eq.b.transpose()).abs().max();
        assert!(asym < 1e-12, "B asymmetry {asym:.3e}");
        for d in 0..eq.c.len() {
            assert!(eq.c[d] >= 0.0);
        }
        // Diagonal of B is non-negative as a sum of squares.
        for k in 0..eq.n_pose_dof() {
            assert!(eq.b[(k, k)] >= -1e-12);
        }
    }

    #[test]
    fn zero_residual_problem_has_zero_gradient() {
        let problem = exact_problem_with_truth(2, 16);
        let eq = linearize(&problem, None).unwrap();
        assert!(eq.v.amax() < 1e-8, "pose gradient {:.3e}", eq.v.amax());
        assert!(eq.w.amax() < 1e-8, "depth gradient {:.3e}", eq.w.amax());
        // Curvature is still present: the system is informative, just at its
        // optimum.
        assert!(eq.c.max() > 0.0);
    }

    #[test]
    fn cross_view_edges_leave_pose_blocks_untouched() {
        let mut problem = exact_problem_with_truth(2, 16);
        problem.edges.retain(|e| matches!(e.key.kind, crate::geometry::PairKind::CrossView));
        assert!(!problem.edges.is_empty(), "need cross-view edges for this test");
        // Move a free pose: cross-view residuals and Jacobians must ignore it.
        let eq_before = linearize(&problem, None).unwrap();
        let free_idx = eq_before.free[0];
        problem.poses[free_idx] =
            problem.poses[free_idx].retract(&Vector6::new(0.3, -0.2, 0.1, 0.05, -0.04, 0.03));
        let eq_after = linearize(&problem, None).unwrap();
        assert_eq!(eq_before.b, eq_after.b);
        assert_eq!(eq_before.v, eq_after.v);
        assert_eq!(eq_before.c, eq_after.c);
        assert_eq!(eq_before.w, eq_after.w);
        assert!(eq_before.b.amax() == 0.0);
        for col in eq_before.e_blocks.iter() {
            assert!(col.is_empty());
        }
    }

    #[test]
    fn gauge_fixed_pose_gets_no_rows() {
        let problem = perturbed_problem();
        let eq = linearize(&problem, None).unwrap();
        assert_eq!(eq.free.len(), problem.poses.len() - problem.fixed.len());
        for f in problem.fixed.iter() {
            assert!(!eq.free.contains(f));
        }
        assert_eq!(eq.b.nrows(), eq.free.len() * 6);
    }

    #[test]
    fn huber_downweights_large_residuals_in_the_gradient() {
        let mut problem = perturbed_problem();
        // Corrupt one target to fabricate a gross outlier.
        let s = &mut problem.edges[0].samples[0];
        s.target_px += Vector2::new(25.0, -18.0);
        let dv = s.depth_var;
        let plain = linearize(&problem, None).unwrap();
        let robust = linearize(&problem, Some(1.0)).unwrap();
        assert!(
            robust.w[dv].abs() < plain.w[dv].abs(),
            "robust |w| {:.3e} vs plain {:.3e}",
            robust.w[dv].abs(),
            plain.w[dv].abs()
        );
    }

    #[test]
    fn translation_blocks_ignore_a_global_shift() {
        // Shifting every body pose by the same world translation leaves the
        // relative chains, and with them the residuals and the translational
        // Jacobian columns, untouched. Only the rotational columns feel the
        // moved lever arm Y, so the 3x3 translation sub-blocks of B must
        // come out identical.
        let problem = perturbed_problem();
        let eq = linearize(&problem, None).unwrap();
        let mut shifted = problem.clone();
        let t = Vector3::new(2.0, -1.0, 3.0);
        for pose in shifted.poses.iter_mut() {
            *pose = Se3::new(pose.rotation, pose.translation + t);
        }
        let eq_shift = linearize(&shifted, None).unwrap();
        for (slot, _) in eq.free.iter().enumerate() {
            let a = eq.b.fixed_view::<3, 3>(slot * 6, slot * 6).clone_owned();
            let b = eq_shift.b.fixed_view::<3, 3>(slot * 6, slot * 6).clone_owned();
            assert!((a - b).amax() < 1e-9);
        }
    }
}
