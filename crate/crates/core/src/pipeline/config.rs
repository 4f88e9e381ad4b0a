//! Pipeline configuration and run reporting.
//!
//! `PipelineConfig` collects every constant the orchestration needs: the
//! keyframe promotion rule, window solver schedules, fusion cadences and the
//! offline-stage toggles. It nests the per-module configs verbatim so a
//! round-tripped JSON file reproduces a run exactly.

use crate::error::{Error, Result};
use crate::geometry::Se3;
use crate::gsmap::InitParams;
use crate::jdsa::JdsaConfig;
use crate::mcba::McbaConfig;
use crate::rasterizer::OptimizeConfig;
use crate::synth::{CorrParams, DepthPriorParams};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Mean-flow keyframe promotion threshold in pixels.
    pub keyframe_threshold_px: f64,
    /// Pixel stride of the mean-flow probe.
    pub flow_stride: u32,
    /// Keyframes in the sliding optimization window; also the temporal span
    /// of covisibility edges (online and offline alike).
    pub ba_window: usize,
    /// Minimum cross-view overlap fraction for rig edges.
    pub overlap_min: f64,
    /// Correspondence sampling: stride, noise model, outlier injection.
    pub corr: CorrParams,
    /// Depth-prior corruption applied when a keyframe is created.
    pub prior: DepthPriorParams,
    /// Bundle adjustment schedule for the window solves.
    pub mcba: McbaConfig,
    /// Joint depth-scale alignment toggle.
    pub jdsa_enabled: bool,
    /// Alignment schedule, used only when enabled.
    pub jdsa: JdsaConfig,
    /// Scale-grid resolution per keyframe camera.
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Gaussian spawning parameters (stride, opacity, coverage gate).
    pub init: InitParams,
    /// Map refinement schedule per promoted keyframe. The pose and exposure
    /// toggles are ignored online; joint refinement belongs to the offline
    /// stage. Zero iterations disable mapping entirely.
    pub mapping: OptimizeConfig,
    /// Run an extra coverage-gated densification after mapping on every
    /// n-th keyframe; 0 disables.
    pub densify_every: usize,
    /// Prune low-opacity Gaussians on every n-th keyframe; 0 disables.
    pub prune_every: usize,
    /// Opacity threshold for pruning.
    pub prune_alpha: f64,
    /// Offline stage 1: global bundle adjustment over the full graph.
    pub offline_global_ba: bool,
    /// Offline stage 2: joint map, pose and exposure refinement.
    pub offline_map_refine: bool,
    /// Schedule for offline stage 2; pose and exposure optimization are
    /// forced on there. Zero iterations disable the stage.
    pub offline: OptimizeConfig,
    /// Seed for prior corruption and correspondence noise.
    pub seed: u64,
    /// Zero every wall-clock timing so reports serialize bitwise. The
    /// estimator itself is deterministic in either mode.
    pub deterministic: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        // Window costs are half-sums of squared pixel residuals. Total cost
        // 1e-12 means sub-nano-pixel RMS error, converged beyond physical
        // meaning; stopping there keeps the solvers from grinding against
        // f64 rounding noise on exact synthetic inputs, where a retry
        // budget exhausted at the noise floor would read as divergence.
        let mut mcba = McbaConfig::default();
        mcba.cost_floor = 1e-12;
        let mut jdsa = JdsaConfig::default();
        jdsa.cost_floor = 1e-12;
        PipelineConfig {
            keyframe_threshold_px: 8.0,
            flow_stride: 4,
            ba_window: 4,
            overlap_min: 0.05,
            corr: CorrParams::default(),
            prior: DepthPriorParams::default(),
            mcba,
            jdsa_enabled: true,
            jdsa,
            grid_rows: 4,
            grid_cols: 4,
            init: InitParams::default(),
            mapping: OptimizeConfig {
                iterations: 40,
                ..OptimizeConfig::default()
            },
            densify_every: 2,
            prune_every: 4,
            prune_alpha: 0.01,
            offline_global_ba: true,
            offline_map_refine: true,
            offline: OptimizeConfig {
                iterations: 100,
                with_pose: true,
                with_exposure: true,
                ..OptimizeConfig::default()
            },
            seed: 7,
            deterministic: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keyframe_threshold_px > 0.0) || !self.keyframe_threshold_px.is_finite() {
            return Err(Error::invalid(format!(
                "keyframe threshold must be positive and finite, got {}",
                self.keyframe_threshold_px
            )));
        }
        if self.flow_stride == 0 || self.corr.stride == 0 {
            return Err(Error::invalid("pixel strides must be positive"));
        }
        if self.ba_window == 0 {
            return Err(Error::invalid("ba_window must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.overlap_min) {
            return Err(Error::invalid(format!(
                "overlap_min must lie in [0, 1], got {}",
                self.overlap_min
            )));
        }
        if self.grid_rows < 2 || self.grid_cols < 2 {
            return Err(Error::invalid(format!(
                "scale grid needs at least 2x2 nodes, got {}x{}",
                self.grid_rows, self.grid_cols
            )));
        }
        if !(0.0..1.0).contains(&self.prune_alpha) {
            return Err(Error::invalid(format!(
                "prune_alpha must lie in [0, 1), got {}",
                self.prune_alpha
            )));
        }
        if !(self.prior.noise_sigma >= 0.0) {
            return Err(Error::invalid(format!(
                "prior noise sigma must be non-negative, got {}",
                self.prior.noise_sigma
            )));
        }
        // Zero iterations disable a stage; the nested configs only have to
        // be coherent when their stage can run.
        if self.mapping.iterations > 0 {
            self.mapping.validate()?;
        }
        if self.offline_map_refine && self.offline.iterations > 0 {
            self.offline.validate()?;
        }
        Ok(())
    }
}

/// Per-keyframe record of what the tracking and mapping workers did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyframeTrace {
    /// Index in the promoted keyframe list.
    pub keyframe: usize,
    /// Index of the source frame in the input sequence.
    pub frame_index: usize,
    /// Accepted-cost trace of the window bundle adjustment.
    pub mcba_costs: Vec<f64>,
    /// Accepted-cost trace of the alignment solve, empty when disabled.
    pub jdsa_costs: Vec<f64>,
    /// Mapping loss trace, empty when mapping is disabled.
    pub mapping_losses: Vec<f64>,
    /// Wall-clock seconds spent on this keyframe; 0 in deterministic mode.
    pub seconds: f64,
}

/// One trajectory sample; poses are body-to-world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub frame_index: usize,
    pub timestamp: f64,
    pub pose: Se3,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MapStats {
    /// Gaussians alive at the end of the run.
    pub gaussians: usize,
    /// Total Gaussians ever spawned.
    pub densified: usize,
    /// Total Gaussians removed by pruning.
    pub pruned: usize,
}

/// Summary of an online run. The trajectory always has exactly one entry
/// per promoted keyframe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub traces: Vec<KeyframeTrace>,
    pub trajectory: Vec<TrajectoryEntry>,
    pub map_stats: MapStats,
    /// Scalar summaries (final costs, counts), all derived from
    /// deterministic state.
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock seconds for the whole run; 0 in deterministic mode.
    pub total_seconds: f64,
}
