//! Sim(3)-aligned absolute trajectory error.

use crate::error::{Error, Result};
use crate::geometry::sim3_align;
use crate::io::Trajectory;

/// Maximum timestamp gap, in seconds, for two samples to count as the same
/// instant when pairing trajectories.
pub const ASSOC_TOL: f64 = 1e-6;

/// RMSE of the translation residuals after Sim(3)-aligning `estimate` onto
/// `reference`, in scene units.
///
/// Samples are paired by timestamp: every estimate sample must have a
/// reference sample within [`ASSOC_TOL`]; anything further apart is an error
/// rather than a silent drop. Extra reference samples are ignored, so a
/// denser ground truth is fine. At least three pairs are required for the
/// alignment to be well posed.
///
/// The score is invariant (up to solver numerics) under any similarity
/// transform applied to the estimate, so a monocular-style global scale or
/// gauge offset does not count as error.
pub fn ate_rmse(estimate: &Trajectory, reference: &Trajectory) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("reference trajectory is empty"));
    }
    let mut est_pts = Vec::with_capacity(estimate.len());
    let mut ref_pts = Vec::with_capacity(estimate.len());
    for s in &estimate.samples {
        let nearest = reference
            .samples
            .iter()
            .min_by(|a, b| {
                (a.timestamp - s.timestamp)
                    .abs()
                    .total_cmp(&(b.timestamp - s.timestamp).abs())
            })
            .expect("reference checked non-empty");
        if (nearest.timestamp - s.timestamp).abs() > ASSOC_TOL {
            return Err(Error::invalid(format!(
                "estimate timestamp {} has no reference sample within {ASSOC_TOL} s",
                s.timestamp
            )));
        }
        est_pts.push(s.pose.translation);
        ref_pts.push(nearest.pose.translation);
    }
    if est_pts.len() < 3 {
        return Err(Error::invalid(format!(
            "trajectory error needs at least 3 matched pose pairs, got {}",
            est_pts.len()
        )));
    }

    let align = sim3_align(&est_pts, &ref_pts)?;
    let sum_sq: f64 = est_pts
        .iter()
        .zip(&ref_pts)
        .map(|(p, q)| (align.transform(p) - q).norm_squared())
        .sum();
    Ok((sum_sq / est_pts.len() as f64).sqrt())
}
