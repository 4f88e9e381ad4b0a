//! Joint depth-scale alignment.
//!
//! After bundle adjustment the sparse optimized inverse depths and the dense
//! depth priors still disagree by a smooth multiplicative field (monocular
//! priors are scale-ambiguous and locally biased). A low-resolution bilinear
//! grid per (keyframe, camera) absorbs that field: the alignment residual
//! compares the grid-corrected prior with the optimized inverse depth,
//!
//! `r_align = 1/(d_prior * B(p, s)) - d`,
//!
//! evaluated in the inverse-depth domain so both cost terms share the same
//! variable. Note the direction: for a prior that is `b` times too long the
//! grid settles at `1/b`, so the corrected prior `d_prior * B` lands on the
//! true metric depth. Callers that want the bias itself read off the
//! reciprocal of the grid.
//!
//! The solve alternates damped Gauss-Newton steps: a depth step (reusing the
//! bundle adjustment linearization with every pose held fixed, plus the
//! exactly quadratic alignment term) and a grid step (one small dense system
//! per grid, since grids never couple across cameras or keyframes). Body
//! poses are never written; their bit patterns survive the call.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CamId;
use crate::jdsa::grid::ScaleGrid;
use crate::mcba::linearize::linearize;
use crate::mcba::problem::{BaProblem, INV_DEPTH_MAX, INV_DEPTH_MIN};
use crate::mcba::residual::problem_cost;

/// Grid values are clamped into this range after every accepted step.
pub const GRID_MIN: f64 = 0.1;
pub const GRID_MAX: f64 = 10.0;

/// A bundle adjustment problem augmented with scale grids and per-variable
/// depth priors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JdsaProblem {
    pub ba: BaProblem,
    /// One grid per (keyframe, camera) that owns depth variables.
    pub grids: BTreeMap<(usize, CamId), ScaleGrid>,
    /// Metric prior depth per depth variable, parallel to `ba.depths`.
    /// Non-positive entries mean "no prior here" and disable the alignment
    /// term for that variable.
    pub priors: Vec<f64>,
}

impl JdsaProblem {
    pub fn new(
        ba: BaProblem,
        grids: BTreeMap<(usize, CamId), ScaleGrid>,
        priors: Vec<f64>,
    ) -> Result<Self> {
        if priors.len() != ba.depths.len() {
            return Err(Error::invalid(format!(
                "{} depth priors for {} depth variables",
                priors.len(),
                ba.depths.len()
            )));
        }
        for (i, p) in priors.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::invalid(format!("depth prior {i} is not finite")));
            }
        }
        for block in &ba.depth_blocks {
            let grid = grids.get(&(block.kf, block.cam)).ok_or_else(|| {
                Error::invalid(format!(
                    "no scale grid for keyframe {} camera {}",
                    block.kf, block.cam
                ))
            })?;
            let intr = &ba.rig.camera(block.cam)?.intrinsics;
            if grid.image_extent() != (intr.width, intr.height) {
                return Err(Error::invalid(format!(
                    "scale grid extent {:?} does not match camera {} image {}x{}",
                    grid.image_extent(),
                    block.cam,
                    intr.width,
                    intr.height
                )));
            }
            for v in grid.values() {
                if !(*v > 0.0) {
                    return Err(Error::invalid("scale grid values must be positive"));
                }
            }
        }
        Ok(JdsaProblem { ba, grids, priors })
    }

    /// Builds uniform unit grids for every depth block.
    pub fn with_unit_grids(ba: BaProblem, rows: usize, cols: usize, priors: Vec<f64>) -> Result<Self> {
        let mut grids = BTreeMap::new();
        for block in &ba.depth_blocks {
            if grids.contains_key(&(block.kf, block.cam)) {
                continue;
            }
            let intr = &ba.rig.camera(block.cam)?.intrinsics;
            grids.insert(
                (block.kf, block.cam),
                ScaleGrid::uniform(rows, cols, intr.width, intr.height, 1.0)?,
            );
        }
        JdsaProblem::new(ba, grids, priors)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JdsaConfig {
    /// Outer alternations; each runs one depth step and one grid step.
    pub outer_iterations: usize,
    /// Weight of the alignment term relative to reprojection. Zero reduces
    /// the solve to a depth-only bundle adjustment step.
    pub align_weight: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_min: f64,
    pub max_retries: usize,
    /// Huber threshold for the reprojection term only.
    pub huber: Option<f64>,
    pub rel_decrease_tol: f64,
    pub cost_floor: f64,
}

impl Default for JdsaConfig {
    fn default() -> Self {
        JdsaConfig {
            outer_iterations: 10,
            align_weight: 1.0,
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

impl JdsaConfig {
    fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 {
            return Err(Error::invalid("outer_iterations must be at least 1"));
        }
        if !(self.align_weight >= 0.0) || !self.align_weight.is_finite() {
            return Err(Error::invalid(format!(
                "align_weight must be finite and non-negative, got {}",
                self.align_weight
            )));
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
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JdsaReport {
    /// Completed outer alternations.
    pub outer_iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Joint cost after every accepted step (depth and grid steps both
    /// append), starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
}

/// The (keyframe, camera) block and pixel of every depth variable, in
/// variable order.
fn variable_sites(ba: &BaProblem) -> Vec<(usize, (f64, f64))> {
    let mut sites = vec![(0usize, (0.0, 0.0)); ba.depths.len()];
    for (block_idx, block) in ba.depth_blocks.iter().enumerate() {
        for (n, &(x, y)) in block.pixels.iter().enumerate() {
            sites[block.offset + n] = (block_idx, (f64::from(x), f64::from(y)));
        }
    }
    sites
}

/// Joint cost: reprojection (optionally robustified) plus the weighted
/// alignment term.
pub fn jdsa_cost(problem: &JdsaProblem, align_weight: f64, huber: Option<f64>) -> Result<f64> {
    let mut cost = problem_cost(&problem.ba, huber)?;
    if align_weight == 0.0 {
        return Ok(cost);
    }
    let sites = variable_sites(&problem.ba);
    for (dv, &(block_idx, (x, y))) in sites.iter().enumerate() {
        let prior = problem.priors[dv];
        if !(prior > 0.0) {
            continue;
        }
        let block = &problem.ba.depth_blocks[block_idx];
        let grid = &problem.grids[&(block.kf, block.cam)];
        let b = grid.interp(x, y)?;
        let r = 1.0 / (prior * b) - problem.ba.depths[dv];
        cost += align_weight * r * r;
    }
    Ok(cost)
}

/// Alternating solve over depths and grids. Poses are read, never written.
pub fn jdsa_solve(problem: &mut JdsaProblem, config: &JdsaConfig) -> Result<JdsaReport> {
    config.validate()?;
    let sites = variable_sites(&problem.ba);
    let mut cost = jdsa_cost(problem, config.align_weight, config.huber)?;
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut lambda_d = config.lambda_init;
    let mut lambda_s = config.lambda_init;
    let mut outer_done = 0;
    let mut converged = false;

    for _outer in 0..config.outer_iterations {
        if cost <= config.cost_floor {
            converged = true;
            break;
        }
        let before_outer = cost;

        cost = depth_step(problem, config, &sites, &mut lambda_d, cost, &mut trace)?;
        cost = grid_step(problem, config, &sites, &mut lambda_s, cost, &mut trace)?;
        outer_done += 1;

        let decrease = before_outer - cost;
        if decrease <= config.rel_decrease_tol * cost.max(config.cost_floor) {
            converged = true;
            break;
        }
    }
    if cost <= config.cost_floor {
        converged = true;
    }

    Ok(JdsaReport {
        outer_iterations: outer_done,
        initial_cost,
        final_cost: cost,
        cost_trace: trace,
        converged,
    })
}

/// One damped Gauss-Newton step over the inverse depths, grids fixed.
fn depth_step(
    problem: &mut JdsaProblem,
    config: &JdsaConfig,
    sites: &[(usize, (f64, f64))],
    lambda: &mut f64,
    cost: f64,
    trace: &mut Vec<f64>,
) -> Result<f64> {
    // Reuse the bundle adjustment linearization with every pose treated as
    // fixed; only the depth curvature and gradient come back filled.
    let saved_fixed = std::mem::replace(
        &mut problem.ba.fixed,
        (0..problem.ba.poses.len()).collect(),
    );
    let eq = linearize(&problem.ba, config.huber);
    problem.ba.fixed = saved_fixed;
    let eq = eq?;

    let nd = problem.ba.depths.len();
    let mut c = eq.c;
    let mut g = eq.w;
    if config.align_weight > 0.0 {
        for dv in 0..nd {
            let prior = problem.priors[dv];
            if !(prior > 0.0) {
                continue;
            }
            let (block_idx, (x, y)) = sites[dv];
            let block = &problem.ba.depth_blocks[block_idx];
            let b = problem.grids[&(block.kf, block.cam)].interp(x, y)?;
            // Alignment is exactly linear in d: target 1/(prior*B), unit
            // Jacobian.
            let r = 1.0 / (prior * b) - problem.ba.depths[dv];
            c[dv] += config.align_weight;
            g[dv] += config.align_weight * r;
        }
    }

    let saved_depths = problem.ba.depths.clone();
    let mut current = cost;
    for _retry in 0..=config.max_retries {
        for dv in 0..nd {
            let denom = c[dv] + *lambda;
            if !(denom > 0.0) {
                return Err(Error::Solver(format!(
                    "depth variable {dv} has non-positive damped curvature {denom:.3e}"
                )));
            }
            problem.ba.depths[dv] =
                (saved_depths[dv] + g[dv] / denom).clamp(INV_DEPTH_MIN, INV_DEPTH_MAX);
        }
        let new_cost = jdsa_cost(problem, config.align_weight, config.huber)?;
        if new_cost <= current {
            current = new_cost;
            trace.push(current);
            *lambda = (*lambda * config.lambda_down).max(config.lambda_min);
            return Ok(current);
        }
        problem.ba.depths.copy_from_slice(&saved_depths);
        *lambda *= config.lambda_up;
    }
    Err(Error::Convergence {
        iterations: trace.len() - 1,
        msg: format!(
            "depth step found no acceptable update after {} retries",
            config.max_retries
        ),
        cost_trace: trace.clone(),
    })
}

/// One damped Gauss-Newton step over every scale grid, depths fixed. Grids
/// are independent, so each gets its own small dense solve; acceptance is
/// still judged on the joint cost.
fn grid_step(
    problem: &mut JdsaProblem,
    config: &JdsaConfig,
    sites: &[(usize, (f64, f64))],
    lambda: &mut f64,
    cost: f64,
    trace: &mut Vec<f64>,
) -> Result<f64> {
    if config.align_weight == 0.0 {
        // Nothing depends on the grids; record the no-op as accepted so the
        // trace still shows one entry per half-step.
        trace.push(cost);
        return Ok(cost);
    }

    // Accumulate per-grid normal equations.
    let mut systems: BTreeMap<(usize, CamId), (DMatrix<f64>, DVector<f64>)> = BTreeMap::new();
    for (key, grid) in problem.grids.iter() {
        let n = grid.node_count();
        systems.insert(*key, (DMatrix::zeros(n, n), DVector::zeros(n)));
    }
    for (dv, &(block_idx, (x, y))) in sites.iter().enumerate() {
        let prior = problem.priors[dv];
        if !(prior > 0.0) {
            continue;
        }
        let block = &problem.ba.depth_blocks[block_idx];
        let key = (block.kf, block.cam);
        let grid = &problem.grids[&key];
        let support = grid.support(x, y)?;
        let b: f64 = support
            .nodes
            .iter()
            .zip(&support.weights)
            .map(|(&n, &w)| grid.values()[n] * w)
            .sum();
        let r = 1.0 / (prior * b) - problem.ba.depths[dv];
        // dr/ds_node = -w_node / (prior * B^2).
        let scale = -1.0 / (prior * b * b);
        let (h, g) = systems.get_mut(&key).expect("grid present by construction");
        for a in 0..4 {
            let ja = config.align_weight * support.weights[a] * scale;
            g[support.nodes[a]] -= ja * r;
            for bidx in 0..4 {
                let jb = support.weights[bidx] * scale;
                h[(support.nodes[a], support.nodes[bidx])] += ja * jb;
            }
        }
    }

    let saved: BTreeMap<(usize, CamId), Vec<f64>> = problem
        .grids
        .iter()
        .map(|(k, g)| (*k, g.values().to_vec()))
        .collect();
    let mut current = cost;
    for _retry in 0..=config.max_retries {
        for (key, (h, g)) in systems.iter() {
            let n = g.len();
            let mut damped = h.clone();
            for k in 0..n {
                damped[(k, k)] += *lambda;
            }
            let delta = match damped.cholesky() {
                Some(chol) => chol.solve(g),
                None => {
                    return Err(Error::Solver(format!(
                        "scale grid system for keyframe {} camera {} is not positive \
                         definite under damping",
                        key.0, key.1
                    )));
                }
            };
            let grid = problem.grids.get_mut(key).expect("grid present");
            let base = &saved[key];
            for (k, v) in grid.values_mut().iter_mut().enumerate() {
                *v = (base[k] + delta[k]).clamp(GRID_MIN, GRID_MAX);
            }
        }
        let new_cost = jdsa_cost(problem, config.align_weight, config.huber)?;
        if new_cost <= current {
            current = new_cost;
            trace.push(current);
            *lambda = (*lambda * config.lambda_down).max(config.lambda_min);
            return Ok(current);
        }
        for (key, base) in saved.iter() {
            problem
                .grids
                .get_mut(key)
                .expect("grid present")
                .values_mut()
                .copy_from_slice(base);
        }
        *lambda *= config.lambda_up;
    }
    Err(Error::Convergence {
        iterations: trace.len() - 1,
        msg: format!(
            "grid step found no acceptable update after {} retries",
            config.max_retries
        ),
        cost_trace: trace.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcba::optimize::{mcba_optimize, McbaConfig};
    use crate::mcba::residual::tests::exact_problem_with_truth;
    use crate::synth::BiasField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    const BIAS_RECOVERY_TOL: f64 = 0.01;

    /// Exact problem with priors corrupted by a per-camera bias field and
    /// depths re-seeded from those priors, as the pipeline would.
    fn biased_problem(bias: &dyn Fn(CamId) -> BiasField) -> JdsaProblem {
        let ba = exact_problem_with_truth(3, 8);
        let mut priors = vec![0.0; ba.depths.len()];
        let mut seeded = ba.clone();
        for block in &ba.depth_blocks {
            let intr = ba.rig.camera(block.cam).unwrap().intrinsics.clone();
            let field = bias(block.cam);
            for (n, &(x, y)) in block.pixels.iter().enumerate() {
                let dv = block.offset + n;
                let exact_depth = 1.0 / ba.depths[dv];
                let b = field.eval(x, y, intr.width, intr.height);
                priors[dv] = exact_depth * b;
                seeded.depths[dv] = 1.0 / priors[dv];
            }
        }
        JdsaProblem::with_unit_grids(seeded, 8, 8, priors).unwrap()
    }

    #[test]
    fn consistent_state_costs_nothing() {
        let ba = exact_problem_with_truth(2, 16);
        let priors: Vec<f64> = ba.depths.iter().map(|d| 1.0 / d).collect();
        let problem = JdsaProblem::with_unit_grids(ba, 8, 8, priors).unwrap();
        let cost = jdsa_cost(&problem, 1.0, None).unwrap();
        assert!(cost < 1e-9, "cost {cost:.3e}");
    }

    #[test]
    fn reciprocal_grid_cancels_a_constant_bias() {
        // Prior 1.2x too long, grid at 1/1.2: the corrected prior matches
        // the true inverse depth and the alignment term vanishes.
        let ba = exact_problem_with_truth(2, 16);
        let priors: Vec<f64> = ba.depths.iter().map(|d| 1.2 / d).collect();
        let mut problem = JdsaProblem::with_unit_grids(ba, 8, 8, priors).unwrap();
        for grid in problem.grids.values_mut() {
            for v in grid.values_mut() {
                *v = 1.0 / 1.2;
            }
        }
        let cost = jdsa_cost(&problem, 1.0, None).unwrap();
        assert!(cost < 1e-9, "cost {cost:.3e}");
    }

    #[test]
    fn grid_gradient_matches_finite_differences() {
        let mut problem = biased_problem(&|_| BiasField::Constant(1.15));
        // Park the depths at the truth so the joint cost is dominated by the
        // alignment term; otherwise the large constant reprojection part
        // absorbs the low bits the finite difference needs.
        let truth = exact_problem_with_truth(3, 8);
        problem.ba.depths.copy_from_slice(&truth.depths);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for grid in problem.grids.values_mut() {
            for v in grid.values_mut() {
                *v = rng.gen_range(0.6..1.6);
            }
        }
        let sites = variable_sites(&problem.ba);
        // Analytic gradient of the joint cost with respect to grid nodes:
        // 2 * w_a * sum r * dr/ds.
        let mut grads: BTreeMap<(usize, CamId), Vec<f64>> = problem
            .grids
            .iter()
            .map(|(k, g)| (*k, vec![0.0; g.node_count()]))
            .collect();
        for (dv, &(block_idx, (x, y))) in sites.iter().enumerate() {
            let prior = problem.priors[dv];
            let block = &problem.ba.depth_blocks[block_idx];
            let key = (block.kf, block.cam);
            let grid = &problem.grids[&key];
            let support = grid.support(x, y).unwrap();
            let b: f64 = support
                .nodes
                .iter()
                .zip(&support.weights)
                .map(|(&n, &w)| grid.values()[n] * w)
                .sum();
            let r = 1.0 / (prior * b) - problem.ba.depths[dv];
            let scale = -1.0 / (prior * b * b);
            let g = grads.get_mut(&key).unwrap();
            for a in 0..4 {
                g[support.nodes[a]] += 2.0 * r * support.weights[a] * scale;
            }
        }

        let h = 1e-6;
        let mut max_rel = 0.0_f64;
        let keys: Vec<_> = problem.grids.keys().copied().collect();
        for key in keys {
            let n = problem.grids[&key].node_count();
            for node in (0..n).step_by(7) {
                let base = problem.grids[&key].values()[node];
                problem.grids.get_mut(&key).unwrap().values_mut()[node] = base + h;
                let up = jdsa_cost(&problem, 1.0, None).unwrap();
                problem.grids.get_mut(&key).unwrap().values_mut()[node] = base - h;
                let down = jdsa_cost(&problem, 1.0, None).unwrap();
                problem.grids.get_mut(&key).unwrap().values_mut()[node] = base;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads[&key][node];
                let scale = fd.abs().max(analytic.abs()).max(1e-9);
                max_rel = max_rel.max((fd - analytic).abs() / scale);
            }
        }
        assert!(max_rel < 1e-5, "grid gradient rel err {max_rel:.3e}");
    }

    #[test]
    fn constant_per_camera_biases_are_recovered() {
        let biases = [1.2, 0.8];
        let mut problem = biased_problem(&|cam| BiasField::Constant(biases[cam]));
        let config = JdsaConfig { outer_iterations: 25, ..JdsaConfig::default() };
        let report = jdsa_solve(&mut problem, &config).unwrap();
        assert!(report.final_cost < report.initial_cost);
        // Judge recovery where the grid is actually constrained: at the
        // sample pixels. Unsupported border nodes retain their start value
        // and would water down a plain node average.
        let sites = variable_sites(&problem.ba);
        let mut sums: BTreeMap<CamId, (f64, usize)> = BTreeMap::new();
        for (dv, &(block_idx, (x, y))) in sites.iter().enumerate() {
            if !(problem.priors[dv] > 0.0) {
                continue;
            }
            let block = &problem.ba.depth_blocks[block_idx];
            let b = problem.grids[&(block.kf, block.cam)].interp(x, y).unwrap();
            let entry = sums.entry(block.cam).or_insert((0.0, 0));
            entry.0 += 1.0 / b;
            entry.1 += 1;
        }
        for (cam, (sum, count)) in sums {
            let recovered = sum / count as f64;
            let truth = biases[cam];
            assert!(
                (recovered - truth).abs() / truth < BIAS_RECOVERY_TOL,
                "camera {cam}: bias {truth} recovered as {recovered:.4}"
            );
        }
        // Depth variables with surviving reprojection observations must land
        // on the true geometry. Variables whose every sample reprojects
        // out of frame are pinned by the alignment term alone, so they can
        // only be as good as the local grid support; all we require of them
        // is sanity.
        let truth = exact_problem_with_truth(3, 8);
        let mut obs = vec![0usize; problem.ba.depths.len()];
        for edge_idx in 0..problem.ba.edges.len() {
            let geom = crate::mcba::residual::edge_geometry(&problem.ba, edge_idx).unwrap();
            for (si, s) in problem.ba.edges[edge_idx].samples.iter().enumerate() {
                let ev =
                    crate::mcba::residual::sample_residual(&problem.ba, &geom, edge_idx, si)
                        .unwrap();
                if ev.valid {
                    obs[s.depth_var] += 1;
                }
            }
        }
        let mut max_rel_observed = 0.0_f64;
        let mut n_observed = 0usize;
        for (dv, (a, b)) in problem.ba.depths.iter().zip(truth.depths.iter()).enumerate() {
            assert!(*a > 0.0 && a.is_finite());
            if obs[dv] > 0 {
                max_rel_observed = max_rel_observed.max((a - b).abs() / b);
                n_observed += 1;
            }
        }
        assert!(n_observed * 10 > problem.ba.depths.len() * 9, "too many dropouts");
        assert!(
            max_rel_observed < 0.01,
            "observed-depth recovery rel err {max_rel_observed:.3e}"
        );
    }

    #[test]
    fn polynomial_bias_field_is_representable() {
        let field = BiasField::Poly2([1.1, 0.08, -0.06, 0.04, 0.03, -0.05]);
        let mut problem = biased_problem(&|_| field.clone());
        jdsa_solve(&mut problem, &JdsaConfig::default()).unwrap();

        let sites = variable_sites(&problem.ba);
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for (dv, &(block_idx, (x, y))) in sites.iter().enumerate() {
            if !(problem.priors[dv] > 0.0) {
                continue;
            }
            let block = &problem.ba.depth_blocks[block_idx];
            let intr = problem.ba.rig.camera(block.cam).unwrap().intrinsics.clone();
            let b = problem.grids[&(block.kf, block.cam)].interp(x, y).unwrap();
            let recovered = 1.0 / b;
            let truth = field.eval(x as u32, y as u32, intr.width, intr.height);
            sq_sum += ((recovered - truth) / truth).powi(2);
            count += 1;
        }
        let rms = (sq_sum / count as f64).sqrt();
        assert!(rms < 0.02, "polynomial bias RMS {rms:.4}");
    }

    #[test]
    fn poses_survive_bitwise() {
        let mut problem = biased_problem(&|_| BiasField::Constant(1.3));
        let before: Vec<_> = problem
            .ba
            .poses
            .iter()
            .map(|p| {
                let q = p.rotation.quaternion();
                (
                    q.w.to_bits(),
                    q.i.to_bits(),
                    q.j.to_bits(),
                    q.k.to_bits(),
                    p.translation.x.to_bits(),
                    p.translation.y.to_bits(),
                    p.translation.z.to_bits(),
                )
            })
            .collect();
        jdsa_solve(&mut problem, &JdsaConfig::default()).unwrap();
        let after: Vec<_> = problem
            .ba
            .poses
            .iter()
            .map(|p| {
                let q = p.rotation.quaternion();
                (
                    q.w.to_bits(),
                    q.i.to_bits(),
                    q.j.to_bits(),
                    q.k.to_bits(),
                    p.translation.x.to_bits(),
                    p.translation.y.to_bits(),
                    p.translation.z.to_bits(),
                )
            })
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn accepted_costs_never_increase() {
        let mut problem = biased_problem(&|_| BiasField::Constant(0.85));
        let report = jdsa_solve(&mut problem, &JdsaConfig::default()).unwrap();
        for pair in report.cost_trace.windows(2) {
            assert!(pair[1] <= pair[0], "trace increased: {:?}", report.cost_trace);
        }
        assert!(report.cost_trace.len() >= 3, "expected accepted half-steps");
    }

    #[test]
    fn zero_alignment_weight_reduces_to_depth_only_ba() {
        let problem0 = biased_problem(&|_| BiasField::Constant(1.1));

        let mut via_jdsa = problem0.clone();
        let config = JdsaConfig { align_weight: 0.0, outer_iterations: 15, ..JdsaConfig::default() };
        jdsa_solve(&mut via_jdsa, &config).unwrap();

        let mut via_mcba = problem0.ba.clone();
        via_mcba.fixed = (0..via_mcba.poses.len()).collect::<BTreeSet<_>>();
        mcba_optimize(&mut via_mcba, &McbaConfig { max_iterations: 30, ..McbaConfig::default() })
            .unwrap();

        let mut max_diff = 0.0_f64;
        for (a, b) in via_jdsa.ba.depths.iter().zip(via_mcba.depths.iter()) {
            max_diff = max_diff.max((a - b).abs() / b.abs().max(1e-9));
        }
        assert!(max_diff < 1e-6, "depth solutions diverge by {max_diff:.3e}");
        // Grids are untouched when the alignment weight is zero.
        for grid in via_jdsa.grids.values() {
            assert!(grid.values().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn extreme_bias_saturates_at_the_clamp() {
        let mut problem = biased_problem(&|_| BiasField::Constant(60.0));
        // Keep depths at the truth so only the grids chase the huge bias.
        let truth = exact_problem_with_truth(3, 8);
        problem.ba.depths.copy_from_slice(&truth.depths);
        let report = jdsa_solve(&mut problem, &JdsaConfig::default());
        // Whether or not the run converges, grid values must stay legal.
        let _ = report;
        for grid in problem.grids.values() {
            for v in grid.values() {
                assert!(*v >= GRID_MIN - 1e-12 && *v <= GRID_MAX + 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_priors_length_rejected() {
        let ba = exact_problem_with_truth(2, 16);
        let short = vec![1.0; ba.depths.len() - 1];
        assert!(JdsaProblem::with_unit_grids(ba, 8, 8, short).is_err());
    }
}
