//! Damped Gauss-Newton driver for the bundle adjustment problem.
//!
//! Each outer iteration linearizes once and then tries Levenberg steps
//! against that linearization: a step that does not increase the cost is
//! accepted (damping relaxes), a step that does is rolled back and retried
//! with stiffer damping. Exhausting the retry budget without an acceptable
//! step is reported as a convergence failure carrying the accepted-cost
//! trace, so callers can distinguish "stalled early" from "diverged".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcba::linearize::linearize;
use crate::mcba::problem::{BaProblem, INV_DEPTH_MAX, INV_DEPTH_MIN};
use crate::mcba::residual::problem_cost;
use crate::mcba::schur::schur_solve;
use nalgebra::Vector6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McbaConfig {
    /// Outer iteration budget (linearizations).
    pub max_iterations: usize,
    /// Initial Levenberg damping.
    pub lambda_init: f64,
    /// Damping multiplier after a rejected step.
    pub lambda_up: f64,
    /// Damping multiplier after an accepted step.
    pub lambda_down: f64,
    /// Damping never relaxes below this.
    pub lambda_min: f64,
    /// Rejections per linearization before giving up.
    pub max_retries: usize,
    /// Huber threshold on the weighted residual magnitude; `None` keeps the
    /// plain quadratic cost.
    pub huber: Option<f64>,
    /// Stop once an accepted step improves the cost by less than this
    /// fraction.
    pub rel_decrease_tol: f64,
    /// Stop outright below this absolute cost. Exact synthetic problems hit
    /// zero, where any further step is numerically meaningless.
    pub cost_floor: f64,
}

impl Default for McbaConfig {
    fn default() -> Self {
        McbaConfig {
            max_iterations: 15,
            lambda_init: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.5,
            lambda_min: 1e-12,
            max_retries: 8,
            huber: None,
            rel_decrease_tol: 1e-10,
            cost_floor: 1e-18,
        }
    }
}

impl McbaConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.lambda_init > 0.0) || !(self.lambda_up > 1.0) {
            return Err(Error::invalid(format!(
                "damping schedule needs lambda_init > 0 and lambda_up > 1, got {} and {}",
                self.lambda_init, self.lambda_up
            )));
        }
        if !(self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return Err(Error::invalid(format!(
                "lambda_down must lie in (0, 1), got {}",
                self.lambda_down
            )));
        }
        if let Some(delta) = self.huber {
            if !(delta > 0.0) {
                return Err(Error::invalid(format!("huber threshold must be positive, got {delta}")));
            }
        }
        Ok(())
    }
}

/// Outcome of one optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McbaReport {
    /// Accepted outer iterations.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    /// Damping after the last accepted step.
    pub lambda_final: f64,
    /// True when the run stopped via the cost floor or the relative
    /// improvement test rather than by exhausting the iteration budget.
    pub converged: bool,
}

/// Optimizes poses and inverse depths in place. Gauge-fixed poses are never
/// written, not even re-normalized, so their bit pattern survives the run.
pub fn mcba_optimize(problem: &mut BaProblem, config: &McbaConfig) -> Result<McbaReport> {
    config.validate()?;
    let mut cost = problem_cost(problem, config.huber)?;
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut lambda = config.lambda_init;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..config.max_iterations {
        if cost <= config.cost_floor {
            converged = true;
            break;
        }
        let eq = linearize(problem, config.huber)?;
        let saved_poses: Vec<_> = eq.free.iter().map(|&i| problem.poses[i].clone()).collect();
        let saved_depths = problem.depths.clone();

        let mut accepted = false;
        for _retry in 0..=config.max_retries {
            let sol = schur_solve(&eq, lambda)?;
            for (slot, &idx) in eq.free.iter().enumerate() {
                let dxi = Vector6::from_fn(|k, _| sol.pose_delta[slot * 6 + k]);
                problem.poses[idx] = saved_poses[slot].retract(&dxi);
            }
            for (d, depth) in problem.depths.iter_mut().enumerate() {
                *depth = (saved_depths[d] + sol.depth_delta[d]).clamp(INV_DEPTH_MIN, INV_DEPTH_MAX);
            }
            let new_cost = problem_cost(problem, config.huber)?;
            if new_cost <= cost {
                let decrease = cost - new_cost;
                cost = new_cost;
                trace.push(cost);
                iterations += 1;
                lambda = (lambda * config.lambda_down).max(config.lambda_min);
                accepted = true;
                if decrease <= config.rel_decrease_tol * cost.max(config.cost_floor) {
                    converged = true;
                }
                break;
            }
            // Roll back and stiffen the damping.
            for (slot, &idx) in eq.free.iter().enumerate() {
                problem.poses[idx] = saved_poses[slot].clone();
            }
            problem.depths.copy_from_slice(&saved_depths);
            lambda *= config.lambda_up;
        }
        if !accepted {
            return Err(Error::Convergence {
                iterations,
                msg: format!(
                    "no acceptable step after {} damping retries (lambda reached {:.3e})",
                    config.max_retries, lambda
                ),
                cost_trace: trace,
            });
        }
        if converged {
            break;
        }
    }

    Ok(McbaReport {
        iterations,
        initial_cost,
        final_cost: cost,
        cost_trace: trace,
        lambda_final: lambda,
        converged,
    })
}
