//! Orchestration of the full system: the online loop (keyframe promotion,
//! windowed bundle adjustment with interleaved depth-scale alignment,
//! Gaussian fusion with densify/prune cadences) and the offline stage
//! (global bundle adjustment, then joint pose, exposure and map refinement).

pub mod config;
pub mod offline;
pub mod online;

pub use config::{KeyframeTrace, MapStats, PipelineConfig, RunReport, TrajectoryEntry};
pub use offline::{offline_refine, OfflineReport};
pub use online::{online_track, OnlineResult};
