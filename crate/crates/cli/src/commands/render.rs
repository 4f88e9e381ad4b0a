//! `splatrig render`: re-render a run's keyframe views from its persisted
//! map, emitting color PNGs and raw depth rasters.

use nalgebra::Matrix3x4;
use splatrig::error::Result;
use splatrig::gsmap::load_ply;
use splatrig::pipeline::{OfflineReport, RunReport};
use splatrig::rasterizer::{render, View};
use std::collections::BTreeMap;
use std::path::Path;

use crate::cli::Overrides;
use crate::commands::run_dir::exposed_color;
use crate::manifest::{load_run_manifest, render_name};
use crate::util;

pub fn run(ov: &Overrides, run: &Path) -> Result<()> {
    let man = load_run_manifest(run)?;
    let rig_path = run.join("rig.json");
    let rig =
        splatrig::geometry::Rig::load(&rig_path).map_err(|e| util::with_path(e, &rig_path))?;
    let map_path = run.join(&man.map_path);
    let map = load_ply(&map_path).map_err(|e| util::with_path(e, &map_path))?;
    let report: RunReport = util::read_json(&run.join(&man.report_path))?;
    let exposures: Option<BTreeMap<usize, Matrix3x4<f64>>> = match &man.offline_path {
        Some(rel) => {
            let reps: Vec<OfflineReport> = util::read_json(&run.join(rel))?;
            reps.into_iter().next_back().map(|rep| rep.exposures)
        }
        None => None,
    };

    let out = ov
        .out
        .clone()
        .unwrap_or_else(|| run.join(&man.renders_dir));
    util::create_dir(&out)?;
    let rcfg = &man.config.pipeline.mapping.render;
    for (k, entry) in report.trajectory.iter().enumerate() {
        let exposure = exposures.as_ref().and_then(|m| m.get(&k));
        for cam in rig.cameras() {
            let view = View::for_camera(&entry.pose, &cam.cam_to_body, cam.intrinsics);
            let output = render(&map, &view, rcfg);
            let color = exposed_color(&output, exposure);
            let stem = render_name(entry.frame_index, cam.id);
            let png = out.join(&stem);
            color.save_png(&png).map_err(|e| util::with_path(e, &png))?;
            let depth_name = stem.replace(".png", "_depth.f32");
            let depth_path = out.join(depth_name);
            let depth = output.depth_raster();
            depth
                .save(&depth_path)
                .map_err(|e| util::with_path(e, &depth_path))?;
        }
    }
    println!(
        "rendered {} views to {}",
        report.trajectory.len() * rig.len(),
        out.display()
    );
    Ok(())
}
