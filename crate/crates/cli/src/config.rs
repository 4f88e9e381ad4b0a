//! CLI configuration: one JSON document with a `synth` section describing
//! the dataset and a `pipeline` section for the solvers. Flags override the
//! file; the file overrides built-in defaults.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use splatrig::error::{Error, Result};
use splatrig::geometry::{Pinhole, Rig, RigCamera, Se3};
use splatrig::pipeline::PipelineConfig;
use splatrig::synth::{sway_spline, PoseSpline, SceneConfig, SequenceConfig};
use std::path::Path;

use crate::cli::Overrides;
use crate::util;

/// Parameters of the sway trajectory fed to the sequence generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub start: [f64; 3],
    pub forward_per_ctrl: [f64; 3],
    pub sway_amp: f64,
    pub yaw_per_ctrl: f64,
    pub n_control: usize,
}

impl Default for SplineSpec {
    fn default() -> Self {
        SplineSpec {
            start: [0.0, 0.0, -3.0],
            forward_per_ctrl: [0.0, 0.0, 0.45],
            sway_amp: 0.3,
            yaw_per_ctrl: 0.06,
            n_control: 4,
        }
    }
}

/// Everything needed to regenerate a dataset deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    /// Sequence name used in evaluation reports.
    pub name: String,
    pub scene: SceneConfig,
    pub rig: Rig,
    pub spline: SplineSpec,
    pub sequence: SequenceConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            name: "synthetic".to_string(),
            scene: SceneConfig::default(),
            rig: default_rig(),
            spline: SplineSpec::default(),
            sequence: SequenceConfig {
                n_frames: 20,
                frame_dt: 0.1,
            },
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub synth: SynthSection,
    pub pipeline: PipelineConfig,
}

/// Three cameras on one body: forward plus two yawed side views, small
/// frames so the defaults run in seconds.
pub fn default_rig() -> Rig {
    let intr = Pinhole::new(40.0, 40.0, 23.5, 17.5, 48, 36).expect("default intrinsics are valid");
    let yaw = |angle: f64, t: Vector3<f64>| {
        Se3::new(UnitQuaternion::from_euler_angles(0.0, angle, 0.0), t)
    };
    Rig::new(vec![
        RigCamera {
            id: 0,
            intrinsics: intr,
            cam_to_body: Se3::identity(),
        },
        RigCamera {
            id: 1,
            intrinsics: intr,
            cam_to_body: yaw(0.35, Vector3::new(0.25, 0.0, 0.05)),
        },
        RigCamera {
            id: 2,
            intrinsics: intr,
            cam_to_body: yaw(-0.35, Vector3::new(-0.25, 0.0, 0.05)),
        },
    ])
    .expect("default rig is valid")
}

impl CliConfig {
    /// Load from a file, or fall back to the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<CliConfig> {
        match path {
            None => Ok(CliConfig::default()),
            Some(p) => util::read_json(p),
        }
    }

    /// Applies flags that steer dataset generation: the seed reseeds the
    /// scene as well as the pipeline.
    pub fn apply_synth_overrides(&mut self, ov: &Overrides) {
        if let Some(seed) = ov.seed {
            self.synth.scene.seed = seed;
        }
        self.apply_run_overrides(ov);
    }

    /// Applies flags for commands that consume an existing dataset: the
    /// scene seed belongs to the data and must not move, only the pipeline
    /// is steered.
    pub fn apply_run_overrides(&mut self, ov: &Overrides) {
        if let Some(seed) = ov.seed {
            self.pipeline.seed = seed;
        }
        if ov.deterministic {
            self.pipeline.deterministic = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.synth.name.is_empty() {
            return Err(Error::invalid("synth.name must not be empty"));
        }
        if self.synth.rig.is_empty() {
            return Err(Error::invalid("synth.rig has no cameras"));
        }
        if self.synth.sequence.n_frames == 0 {
            return Err(Error::invalid("synth.sequence.n_frames must be at least 1"));
        }
        if !(self.synth.sequence.frame_dt > 0.0) {
            return Err(Error::invalid("synth.sequence.frame_dt must be positive"));
        }
        self.pipeline.validate()
    }

    pub fn build_spline(&self) -> PoseSpline {
        let s = &self.synth.spline;
        sway_spline(
            Vector3::from(s.start),
            Vector3::from(s.forward_per_ctrl),
            s.sway_amp,
            s.yaw_per_ctrl,
            s.n_control,
        )
    }
}
