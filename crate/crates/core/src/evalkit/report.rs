//! Metric reports: JSON for machines, CSV shaped like the usual benchmark
//! tables (one sequence per row, one metric per column).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Scores for one evaluated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    /// Sim(3)-aligned trajectory RMSE, scene units.
    pub ate_rmse: f64,
    /// PSNR pooled over every rendered keyframe image of the rig, dB.
    pub psnr_mean: f64,
    /// SSIM pooled the same way.
    pub ssim_mean: f64,
    /// PSNR restricted to each camera, keyed by camera name, since pooling
    /// across a rig is a reporting choice rather than part of the metric.
    pub psnr_per_camera: BTreeMap<String, f64>,
}

/// Full evaluation report over a set of sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sequence: BTreeMap<String, SequenceMetrics>,
    /// Fingerprint of the config that produced the scored runs, so reports
    /// are only compared like for like.
    pub config_hash: String,
}

impl EvalReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("eval report: {e}")))
    }

    /// One row per sequence with the headline metrics; per-camera numbers
    /// stay in the JSON report.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,ate_rmse,psnr_mean,ssim_mean\n");
        for (name, m) in &self.per_sequence {
            writeln!(out, "{},{},{},{}", name, m.ate_rmse, m.psnr_mean, m.ssim_mean)
                .expect("string write cannot fail");
        }
        out
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json_string())?;
        std::fs::write(csv_path, self.to_csv())?;
        Ok(())
    }
}

/// Stable 64-bit FNV-1a fingerprint of a serialized config, hex encoded.
///
/// Not cryptographic; it only has to be deterministic across platforms and
/// toolchain versions so that identical configs always stamp reports with
/// the identical hash (the std hasher guarantees neither).
pub fn config_hash(config_text: &str) -> String {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for byte in config_text.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(PRIME);
    }
    format!("{h:016x}")
}
