//! Directory manifests: every dataset and run directory carries a JSON
//! manifest recording the configuration that produced it and where its
//! artifacts live, so later commands can regenerate the exact inputs.
//!
//! A run directory does not persist solver state. `refine` re-runs the
//! online stage from the dataset (bitwise reproducible by construction) and
//! then applies `refine_rounds + 1` offline passes, which is what
//! "refining an already refined run" means here.

use serde::{Deserialize, Serialize};
use splatrig::error::Result;
use std::path::{Path, PathBuf};

use crate::config::CliConfig;
use crate::util;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Always "dataset".
    pub kind: String,
    pub name: String,
    /// Scene seed actually used, after flag overrides.
    pub seed: u64,
    pub n_frames: usize,
    pub cameras: usize,
    pub frame_dt: f64,
    /// Full effective config, the source of truth for regeneration.
    pub config: CliConfig,
    pub rig_path: String,
    pub groundtruth_path: String,
    pub frames_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Always "run".
    pub kind: String,
    /// Dataset directory this run consumed, as passed on the command line.
    pub dataset: PathBuf,
    pub jdsa_enabled: bool,
    /// How many offline refinement passes produced this state; 0 for a
    /// plain tracking run.
    pub refine_rounds: usize,
    pub seed: u64,
    pub deterministic: bool,
    /// Full effective config used by the run.
    pub config: CliConfig,
    pub trajectory_path: String,
    pub map_path: String,
    pub report_path: String,
    pub renders_dir: String,
    /// Offline stage reports, present on refined runs.
    pub offline_path: Option<String>,
}

pub fn load_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    util::read_json(&dir.join(MANIFEST_FILE))
}

pub fn load_run_manifest(dir: &Path) -> Result<RunManifest> {
    util::read_json(&dir.join(MANIFEST_FILE))
}

/// `frames/frame_00012` style subdirectory for one frame index.
pub fn frame_dir(frames_dir: &Path, index: usize) -> PathBuf {
    frames_dir.join(format!("frame_{index:05}"))
}

/// `kf_00012_cam0.png` style filename for a rendered keyframe image.
pub fn render_name(frame_index: usize, cam_id: usize) -> String {
    format!("kf_{frame_index:05}_cam{cam_id}.png")
}
