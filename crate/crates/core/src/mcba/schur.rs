//! Schur-complement solve of the damped normal equations.
//!
//! Depths are eliminated first: because `C` is diagonal, the reduced pose
//! system is `S = B + lambda*I - sum_d e_d e_d^T / c_d` with
//! `rhs = v - sum_d (w_d / c_d) e_d`, where `e_d` is the sparse pose column
//! of depth `d` and `c_d` its damped curvature. Pose increments come from a
//! Cholesky factorization of `S`; depths are back-substituted one scalar at
//! a time. The result is algebraically identical to solving the full
//! `(6k + n_d)`-dimensional system, at a fraction of the cost since `n_d`
//! dwarfs `6k`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mcba::linearize::NormalEquations;

/// Solution of one damped solve: pose increments (6 per free pose, same
/// order as `NormalEquations::free`) and per-variable depth increments.
#[derive(Debug, Clone)]
pub struct SchurSolution {
    pub pose_delta: DVector<f64>,
    pub depth_delta: DVector<f64>,
}

/// Solves `[B+lI, E; E^T, C+lI] [dxi; dd] = [v; w]` via the Schur complement.
pub fn schur_solve(eq: &NormalEquations, lambda: f64) -> Result<SchurSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Solver(format!("damping must be finite and non-negative, got {lambda}")));
    }
    let np = eq.n_pose_dof();
    let nd = eq.c.len();

    // Damped depth curvatures, checked up front so division is safe.
    let mut c_damped = DVector::zeros(nd);
    for d in 0..nd {
        let cd = eq.c[d] + lambda;
        if !(cd > 0.0) {
            return Err(Error::Solver(format!(
                "depth variable {d} has non-positive damped curvature {cd:.3e}; \
                 the sample is unconstrained and damping is too small"
            )));
        }
        c_damped[d] = cd;
    }

    let pose_delta = if np == 0 {
        DVector::zeros(0)
    } else {
        let mut s = eq.b.clone();
        for k in 0..np {
            s[(k, k)] += lambda;
        }
        let mut rhs = eq.v.clone();
        for d in 0..nd {
            let blocks = &eq.e_blocks[d];
            if blocks.is_empty() {
                continue;
            }
            let inv_c = 1.0 / c_damped[d];
            let scale_w = eq.w[d] * inv_c;
            for (sa, ua) in blocks {
                for (sb, ub) in blocks {
                    let mut view = s.fixed_view_mut::<6, 6>(sa * 6, sb * 6);
                    view -= ua * ub.transpose() * inv_c;
                }
                for k in 0..6 {
                    rhs[sa * 6 + k] -= ua[k] * scale_w;
                }
            }
        }
        match s.cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => {
                return Err(Error::Solver(
                    "reduced pose system is not positive definite even after damping".into(),
                ));
            }
        }
    };

    let mut depth_delta = DVector::zeros(nd);
    for d in 0..nd {
        let mut coupled = 0.0;
        for (slot, u) in &eq.e_blocks[d] {
            for k in 0..6 {
                coupled += u[k] * pose_delta[slot * 6 + k];
            }
        }
        depth_delta[d] = (eq.w[d] - coupled) / c_damped[d];
    }

    Ok(SchurSolution { pose_delta, depth_delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, Vector6};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const AGREEMENT_TOL: f64 = 1e-8;

    /// Random normal equations with the solver's sparsity pattern. `B` is
    /// made positive semidefinite as `B0^T B0`, plus the eliminated-depth
    /// contribution so the full matrix (not just `B`) is well conditioned.
    fn random_equations(rng: &mut ChaCha8Rng, n_free: usize, n_depth: usize) -> NormalEquations {
        let np = n_free * 6;
        let b0 = DMatrix::from_fn(np, np, |_, _| rng.gen_range(-1.0..1.0));
        let mut b = &b0.transpose() * &b0;
        for k in 0..np {
            b[(k, k)] += 0.5;
        }
        let mut e_blocks = Vec::with_capacity(n_depth);
        let mut c = DVector::zeros(n_depth);
        let mut w = DVector::zeros(n_depth);
        for d in 0..n_depth {
            let mut col = Vec::new();
            // Couple each depth to up to two random pose slots, as a
            // temporal edge pair would.
            let n_links = rng.gen_range(0..=2.min(n_free));
            let mut used = Vec::new();
            while used.len() < n_links {
                let s = rng.gen_range(0..n_free);
                if !used.contains(&s) {
                    used.push(s);
                    let u = Vector6::from_fn(|_, _| rng.gen_range(-0.3..0.3));
                    col.push((s, u));
                }
            }
            c[d] = rng.gen_range(0.8..4.0);
            w[d] = rng.gen_range(-1.0..1.0);
            e_blocks.push(col);
        }
        // Keep the full matrix positive definite: the random coupling can
        // otherwise make the depth-eliminated system indefinite. Adding
        // sum_d e_d e_d^T / c_d to B guarantees S stays dominated by B0^T B0.
        for d in 0..n_depth {
            let blocks = &e_blocks[d];
            for (sa, ua) in blocks {
                for (sb, ub) in blocks {
                    let mut view = b.fixed_view_mut::<6, 6>(sa * 6, sb * 6);
                    view += ua * ub.transpose() / c[d];
                }
            }
        }
        let v = DVector::from_fn(np, |_, _| rng.gen_range(-1.0..1.0));
        NormalEquations { free: (0..n_free).collect(), b, e_blocks, c, v, w }
    }

    #[test]
    fn matches_the_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..20 {
            let n_free = rng.gen_range(1..4);
            let n_depth = rng.gen_range(5..40);
            let eq = random_equations(&mut rng, n_free, n_depth);
            let lambda = 10f64.powf(rng.gen_range(-6.0..-1.0));

            let sol = schur_solve(&eq, lambda).unwrap();
            let (h, rhs) = eq.full_dense(lambda);
            let dense = h.cholesky().expect("dense system SPD").solve(&rhs);

            let np = eq.n_pose_dof();
            for k in 0..np {
                let err = (sol.pose_delta[k] - dense[k]).abs();
                let scale = dense[k].abs().max(1.0);
                assert!(err / scale < AGREEMENT_TOL, "trial {trial} pose dof {k}: {err:.2e}");
            }
            for d in 0..n_depth {
                let err = (sol.depth_delta[d] - dense[np + d]).abs();
                let scale = dense[np + d].abs().max(1.0);
                assert!(err / scale < AGREEMENT_TOL, "trial {trial} depth {d}: {err:.2e}");
            }
        }
    }

    #[test]
    fn depth_only_system_divides_through() {
        let eq = NormalEquations {
            free: Vec::new(),
            b: DMatrix::zeros(0, 0),
            e_blocks: vec![Vec::new(), Vec::new()],
            c: DVector::from_vec(vec![2.0, 4.0]),
            v: DVector::zeros(0),
            w: DVector::from_vec(vec![1.0, 1.0]),
        };
        let sol = schur_solve(&eq, 0.0).unwrap();
        assert_eq!(sol.pose_delta.len(), 0);
        assert!((sol.depth_delta[0] - 0.5).abs() < 1e-15);
        assert!((sol.depth_delta[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_curvature_depth_is_rejected_without_damping() {
        let eq = NormalEquations {
            free: Vec::new(),
            b: DMatrix::zeros(0, 0),
            e_blocks: vec![Vec::new()],
            c: DVector::from_vec(vec![0.0]),
            v: DVector::zeros(0),
            w: DVector::from_vec(vec![0.0]),
        };
        assert!(schur_solve(&eq, 0.0).is_err());
        // Damping rescues the system: an unconstrained depth just stays put.
        let sol = schur_solve(&eq, 1e-4).unwrap();
        assert_eq!(sol.depth_delta[0], 0.0);
    }

    #[test]
    fn negative_damping_is_rejected() {
        let eq = NormalEquations {
            free: Vec::new(),
            b: DMatrix::zeros(0, 0),
            e_blocks: Vec::new(),
            c: DVector::zeros(0),
            v: DVector::zeros(0),
            w: DVector::zeros(0),
        };
        assert!(schur_solve(&eq, -1.0).is_err());
        assert!(schur_solve(&eq, f64::NAN).is_err());
    }

    #[test]
    fn solves_the_linearized_ba_problem_consistently() {
        // End-to-end structural check on real equations from the
        // linearization: Schur and dense agree there too, not only on
        // synthetic random systems.
        let problem = crate::mcba::residual::tests::exact_problem_with_truth(3, 16);
        let mut perturbed = problem.clone();
        for d in perturbed.depths.iter_mut() {
            *d *= 1.02;
        }
        let eq = crate::mcba::linearize::linearize(&perturbed, None).unwrap();
        let lambda = 1e-4;
        let sol = schur_solve(&eq, lambda).unwrap();
        let (h, rhs) = eq.full_dense(lambda);
        let dense = h.cholesky().expect("damped BA system SPD").solve(&rhs);
        let np = eq.n_pose_dof();
        for k in 0..np {
            assert!((sol.pose_delta[k] - dense[k]).abs() < 1e-9);
        }
        for d in 0..eq.c.len() {
            assert!((sol.depth_delta[d] - dense[np + d]).abs() < 1e-9);
        }
    }
}
