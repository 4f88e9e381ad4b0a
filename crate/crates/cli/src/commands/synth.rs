//! `splatrig synth`: generate a synthetic dataset directory.

use splatrig::error::Result;
use splatrig::io::Trajectory;
use splatrig::synth::{generate_scene, generate_sequence};
use std::path::{Path, PathBuf};

use crate::cli::Overrides;
use crate::config::CliConfig;
use crate::manifest::{frame_dir, DatasetManifest, MANIFEST_FILE};
use crate::util;

pub fn run(ov: &Overrides) -> Result<()> {
    let mut cfg = CliConfig::load(ov.config.as_deref())?;
    cfg.apply_synth_overrides(ov);
    cfg.validate()?;

    let scene = generate_scene(&cfg.synth.scene)?;
    let spline = cfg.build_spline();
    let frames = generate_sequence(&scene, &cfg.synth.rig, &spline, &cfg.synth.sequence)?;

    let out = ov.out.clone().unwrap_or_else(|| PathBuf::from("dataset"));
    util::create_dir(&out)?;
    let frames_root = out.join("frames");
    util::create_dir(&frames_root)?;

    let rig_path = out.join("rig.json");
    cfg.synth
        .rig
        .save(&rig_path)
        .map_err(|e| util::with_path(e, &rig_path))?;

    let mut gt = Trajectory::default();
    for f in &frames {
        gt.push(f.timestamp, f.pose);
    }
    let gt_path = out.join("groundtruth.txt");
    gt.save(&gt_path).map_err(|e| util::with_path(e, &gt_path))?;

    for f in &frames {
        let fdir = frame_dir(&frames_root, f.index);
        util::create_dir(&fdir)?;
        for (cam, cf) in cfg.synth.rig.cameras().iter().zip(&f.cams) {
            save_raster(&cf.image, &fdir.join(format!("cam{}.png", cam.id)), true)?;
            save_raster(&cf.depth, &fdir.join(format!("cam{}_depth.f32", cam.id)), false)?;
            save_raster(&cf.normal, &fdir.join(format!("cam{}_normal.f32", cam.id)), false)?;
        }
    }

    let manifest = DatasetManifest {
        kind: "dataset".to_string(),
        name: cfg.synth.name.clone(),
        seed: cfg.synth.scene.seed,
        n_frames: cfg.synth.sequence.n_frames,
        cameras: cfg.synth.rig.len(),
        frame_dt: cfg.synth.sequence.frame_dt,
        config: cfg,
        rig_path: "rig.json".to_string(),
        groundtruth_path: "groundtruth.txt".to_string(),
        frames_dir: "frames".to_string(),
    };
    util::write_json(&out.join(MANIFEST_FILE), &manifest)?;

    println!("dataset written to {}", out.display());
    Ok(())
}

fn save_raster(raster: &splatrig::io::Raster, path: &Path, png: bool) -> Result<()> {
    let res = if png {
        raster.save_png(path)
    } else {
        raster.save(path)
    };
    res.map_err(|e| util::with_path(e, path))
}
