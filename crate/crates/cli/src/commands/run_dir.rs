//! Shared writer for run directories (`track` and `refine` emit the same
//! layout): trajectory, map, report, rig copy, rendered keyframe images,
//! and a manifest tying them together.

use nalgebra::{Matrix3x4, Vector3};
use splatrig::error::Result;
use splatrig::geometry::Rig;
use splatrig::gsmap::{save_ply, GaussianMap};
use splatrig::io::{Raster, Trajectory};
use splatrig::pipeline::{OfflineReport, RunReport};
use splatrig::rasterizer::{apply_exposure, render, RenderOutput, View};
use splatrig::synth::Keyframe;
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::CliConfig;
use crate::manifest::{render_name, RunManifest, MANIFEST_FILE};
use crate::util;

pub struct RunArtifacts<'a> {
    pub dataset: &'a Path,
    pub config: &'a CliConfig,
    pub report: &'a RunReport,
    pub keyframes: &'a [Keyframe],
    pub map: &'a GaussianMap,
    pub rig: &'a Rig,
    pub refine_rounds: usize,
    /// Offline stage reports; present only on refined runs.
    pub offline: Option<&'a [OfflineReport]>,
}

pub fn write_run_dir(out: &Path, art: &RunArtifacts) -> Result<()> {
    util::create_dir(out)?;
    let renders = out.join("renders");
    util::create_dir(&renders)?;

    let mut tr = Trajectory::default();
    for e in &art.report.trajectory {
        tr.push(e.timestamp, e.pose);
    }
    let tr_path = out.join("trajectory.txt");
    tr.save(&tr_path).map_err(|e| util::with_path(e, &tr_path))?;

    let map_path = out.join("map.ply");
    save_ply(art.map, &map_path).map_err(|e| util::with_path(e, &map_path))?;

    util::write_json(&out.join("report.json"), art.report)?;

    let rig_path = out.join("rig.json");
    art.rig
        .save(&rig_path)
        .map_err(|e| util::with_path(e, &rig_path))?;

    // The latest offline pass owns the exposure state; renders go through it
    // so the images match what the refinement optimized toward.
    let exposures: Option<&BTreeMap<usize, Matrix3x4<f64>>> = art
        .offline
        .and_then(|reps| reps.last())
        .map(|rep| &rep.exposures);
    let rcfg = &art.config.pipeline.mapping.render;
    for (k, kf) in art.keyframes.iter().enumerate() {
        let exposure = exposures.and_then(|m| m.get(&k));
        for cam in art.rig.cameras() {
            let view = View::for_camera(&kf.pose, &cam.cam_to_body, cam.intrinsics);
            let output = render(art.map, &view, rcfg);
            let image = exposed_color(&output, exposure);
            let path = renders.join(render_name(kf.frame_index, cam.id));
            image.save_png(&path).map_err(|e| util::with_path(e, &path))?;
        }
    }

    let offline_path = match art.offline {
        Some(reps) => {
            util::write_json(&out.join("offline.json"), &reps)?;
            Some("offline.json".to_string())
        }
        None => None,
    };

    let manifest = RunManifest {
        kind: "run".to_string(),
        dataset: art.dataset.to_path_buf(),
        jdsa_enabled: art.config.pipeline.jdsa_enabled,
        refine_rounds: art.refine_rounds,
        seed: art.config.pipeline.seed,
        deterministic: art.config.pipeline.deterministic,
        config: art.config.clone(),
        trajectory_path: "trajectory.txt".to_string(),
        map_path: "map.ply".to_string(),
        report_path: "report.json".to_string(),
        renders_dir: "renders".to_string(),
        offline_path,
    };
    util::write_json(&out.join(MANIFEST_FILE), &manifest)
}

pub fn exposed_color(output: &RenderOutput, exposure: Option<&Matrix3x4<f64>>) -> Raster {
    let mut raster = output.color_raster();
    if let Some(a) = exposure {
        for y in 0..raster.height() {
            for x in 0..raster.width() {
                let px = raster.px(x, y);
                let c = Vector3::new(f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
                let e = apply_exposure(a, &c);
                raster
                    .px_mut(x, y)
                    .copy_from_slice(&[e.x as f32, e.y as f32, e.z as f32]);
            }
        }
    }
    raster
}
