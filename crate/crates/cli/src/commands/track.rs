//! `splatrig track`: online tracking and mapping over a dataset.

use splatrig::error::Result;
use splatrig::geometry::Rig;
use splatrig::pipeline::online_track;
use splatrig::synth::{generate_scene, generate_sequence};
use std::path::{Path, PathBuf};

use crate::cli::Overrides;
use crate::commands::run_dir::{write_run_dir, RunArtifacts};
use crate::config::CliConfig;
use crate::manifest::load_dataset_manifest;
use crate::util;

pub fn run(ov: &Overrides, dataset: &Path, no_jdsa: bool) -> Result<()> {
    let man = load_dataset_manifest(dataset)?;
    let rig_path = dataset.join(&man.rig_path);
    let rig = Rig::load(&rig_path).map_err(|e| util::with_path(e, &rig_path))?;

    // The pipeline section may come from --config; the synth section always
    // comes from the dataset manifest because it describes the data itself.
    let mut cfg = match &ov.config {
        Some(p) => CliConfig::load(Some(p))?,
        None => man.config.clone(),
    };
    cfg.synth = man.config.synth.clone();
    cfg.apply_run_overrides(ov);
    if no_jdsa {
        cfg.pipeline.jdsa_enabled = false;
    }
    cfg.validate()?;

    let scene = generate_scene(&cfg.synth.scene)?;
    let frames = generate_sequence(&scene, &rig, &cfg.build_spline(), &cfg.synth.sequence)?;
    let result = online_track(&scene, &frames, &rig, &cfg.pipeline)?;

    let out = ov.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    write_run_dir(
        &out,
        &RunArtifacts {
            dataset,
            config: &cfg,
            report: &result.report,
            keyframes: &result.keyframes,
            map: &result.map,
            rig: &rig,
            refine_rounds: 0,
            offline: None,
        },
    )?;
    println!("run written to {}", out.display());
    Ok(())
}
