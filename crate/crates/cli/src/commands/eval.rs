//! `splatrig eval`: score a run against dataset ground truth and emit the
//! report plus plot-ready trajectory traces.

use nalgebra::Vector3;
use splatrig::error::{Error, Result};
use splatrig::evalkit::{ate_rmse, config_hash, psnr, ssim, EvalReport, SequenceMetrics, ASSOC_TOL};
use splatrig::geometry::{sim3_align, Rig};
use splatrig::io::{Raster, Trajectory};
use splatrig::pipeline::RunReport;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::cli::Overrides;
use crate::manifest::{frame_dir, load_dataset_manifest, load_run_manifest, render_name};
use crate::util;

pub fn run(ov: &Overrides, run: &Path, dataset: &Path) -> Result<()> {
    let rman = load_run_manifest(run)?;
    let dman = load_dataset_manifest(dataset)?;

    let est_path = run.join(&rman.trajectory_path);
    let est = Trajectory::load(&est_path).map_err(|e| util::with_path(e, &est_path))?;
    let gt_path = dataset.join(&dman.groundtruth_path);
    let gt = Trajectory::load(&gt_path).map_err(|e| util::with_path(e, &gt_path))?;
    let ate = ate_rmse(&est, &gt)?;

    let report: RunReport = util::read_json(&run.join(&rman.report_path))?;
    let rig_path = run.join("rig.json");
    let rig = Rig::load(&rig_path).map_err(|e| util::with_path(e, &rig_path))?;

    let renders = run.join(&rman.renders_dir);
    let frames_root = dataset.join(&dman.frames_dir);
    let mut psnr_all = Vec::new();
    let mut ssim_all = Vec::new();
    let mut psnr_by_cam: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for entry in &report.trajectory {
        for cam in rig.cameras() {
            let rendered = load_png(&renders.join(render_name(entry.frame_index, cam.id)))?;
            let truth = load_png(
                &frame_dir(&frames_root, entry.frame_index).join(format!("cam{}.png", cam.id)),
            )?;
            psnr_all.push(psnr(&rendered, &truth)?);
            ssim_all.push(ssim(&rendered, &truth)?);
            psnr_by_cam
                .entry(format!("cam{}", cam.id))
                .or_default()
                .push(*psnr_all.last().expect("just pushed"));
        }
    }
    if psnr_all.is_empty() {
        return Err(Error::invalid("run has no rendered keyframes to score"));
    }

    let metrics = SequenceMetrics {
        ate_rmse: ate,
        psnr_mean: util::mean(&psnr_all),
        ssim_mean: util::mean(&ssim_all),
        psnr_per_camera: psnr_by_cam
            .into_iter()
            .map(|(k, v)| (k, util::mean(&v)))
            .collect(),
    };
    let config_text =
        serde_json::to_string(&rman.config).expect("config serialization cannot fail");
    let mut eval = EvalReport {
        per_sequence: BTreeMap::new(),
        config_hash: config_hash(&config_text),
    };
    eval.per_sequence.insert(dman.name.clone(), metrics);

    let out = ov.out.clone().unwrap_or_else(|| run.join("eval"));
    util::create_dir(&out)?;
    eval.save(&out.join("report.json"), &out.join("report.csv"))?;
    write_plot_traces(&out.join("plot_trajectory.csv"), &est, &gt)?;

    let m = &eval.per_sequence[&dman.name];
    println!(
        "{}: ate_rmse {} psnr_mean {} ssim_mean {}",
        dman.name, m.ate_rmse, m.psnr_mean, m.ssim_mean
    );
    Ok(())
}

fn load_png(path: &Path) -> Result<Raster> {
    Raster::load_png(path).map_err(|e| util::with_path(e, path))
}

/// Per-axis traces of the Sim(3)-aligned estimate against the reference,
/// one row per matched timestamp.
fn write_plot_traces(path: &Path, est: &Trajectory, reference: &Trajectory) -> Result<()> {
    let mut est_pts = Vec::new();
    let mut ref_pts = Vec::new();
    let mut stamps = Vec::new();
    for s in &est.samples {
        let nearest = reference
            .samples
            .iter()
            .min_by(|a, b| {
                (a.timestamp - s.timestamp)
                    .abs()
                    .total_cmp(&(b.timestamp - s.timestamp).abs())
            })
            .ok_or_else(|| Error::invalid("reference trajectory is empty"))?;
        if (nearest.timestamp - s.timestamp).abs() > ASSOC_TOL {
            return Err(Error::invalid(format!(
                "estimate timestamp {} has no reference sample within {ASSOC_TOL} s",
                s.timestamp
            )));
        }
        stamps.push(s.timestamp);
        est_pts.push(s.pose.translation);
        ref_pts.push(nearest.pose.translation);
    }
    let align = sim3_align(&est_pts, &ref_pts)?;
    let mut csv = String::from("timestamp,est_x,est_y,est_z,ref_x,ref_y,ref_z\n");
    for ((t, p), q) in stamps.iter().zip(&est_pts).zip(&ref_pts) {
        let a: Vector3<f64> = align.transform(p);
        writeln!(csv, "{t},{},{},{},{},{},{}", a.x, a.y, a.z, q.x, q.y, q.z)
            .expect("string write cannot fail");
    }
    std::fs::write(path, csv).map_err(|e| util::with_path(Error::Io(e), path))
}
