//! `splatrig refine`: reproduce a run's online stage and apply offline
//! refinement.
//!
//! Run directories do not persist solver state, so the online stage is
//! re-run from the dataset; with the recorded config and seed that is
//! bitwise identical to the original. Refining a run that was itself
//! refined applies one more offline pass on top of the recorded count.

use splatrig::error::Result;
use splatrig::geometry::Rig;
use splatrig::pipeline::{offline_refine, online_track};
use splatrig::synth::{generate_scene, generate_sequence};
use std::path::{Path, PathBuf};

use crate::cli::Overrides;
use crate::commands::run_dir::{write_run_dir, RunArtifacts};
use crate::config::CliConfig;
use crate::manifest::load_run_manifest;
use crate::util;

pub fn run(ov: &Overrides, run: &Path) -> Result<()> {
    let rman = load_run_manifest(run)?;
    let rig_path = run.join("rig.json");
    let rig = Rig::load(&rig_path).map_err(|e| util::with_path(e, &rig_path))?;

    let mut cfg = match &ov.config {
        Some(p) => {
            let mut c = CliConfig::load(Some(p))?;
            c.synth = rman.config.synth.clone();
            c
        }
        None => rman.config.clone(),
    };
    cfg.apply_run_overrides(ov);
    cfg.validate()?;

    let scene = generate_scene(&cfg.synth.scene)?;
    let frames = generate_sequence(&scene, &rig, &cfg.build_spline(), &cfg.synth.sequence)?;
    let mut result = online_track(&scene, &frames, &rig, &cfg.pipeline)?;

    let rounds = rman.refine_rounds + 1;
    let mut offline_reports = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        offline_reports.push(offline_refine(
            &scene,
            &result.frames,
            &rig,
            &mut result.keyframes,
            &mut result.map,
            &cfg.pipeline,
        )?);
    }

    for (entry, kf) in result.report.trajectory.iter_mut().zip(&result.keyframes) {
        entry.pose = kf.pose;
    }
    let report = offline_reports.last().expect("at least one refinement pass");
    if let Some(c) = report.global_ba_costs.last() {
        result
            .report
            .metrics
            .insert("offline_final_ba_cost".to_string(), *c);
    }
    if let Some(l) = report.refine_losses.last() {
        result
            .report
            .metrics
            .insert("offline_final_refine_loss".to_string(), *l);
    }
    result
        .report
        .metrics
        .insert("refine_rounds".to_string(), rounds as f64);

    let out = ov.out.clone().unwrap_or_else(|| default_out(run));
    write_run_dir(
        &out,
        &RunArtifacts {
            dataset: &rman.dataset,
            config: &cfg,
            report: &result.report,
            keyframes: &result.keyframes,
            map: &result.map,
            rig: &rig,
            refine_rounds: rounds,
            offline: Some(&offline_reports),
        },
    )?;
    println!("refined run written to {}", out.display());
    Ok(())
}

fn default_out(run: &Path) -> PathBuf {
    let name = run
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".to_string());
    run.with_file_name(format!("{name}-refined"))
}
