//! Trajectory text files: one `timestamp tx ty tz qw qx qy qz` line per
//! keyframe, `#` starts a comment. Poses are body-to-world.

use crate::error::{Error, Result};
use crate::geometry::Se3;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub timestamp: f64,
    pub pose: Se3,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn push(&mut self, timestamp: f64, pose: Se3) {
        self.samples.push(TrajectorySample { timestamp, pose });
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|s| s.pose.translation).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let t = s.pose.translation;
            let q = s.pose.rotation.quaternion();
            // `{}` prints the shortest representation that round-trips, so a
            // save/load cycle is lossless and reruns are byte-stable.
            writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                s.timestamp, t.x, t.y, t.z, q.w, q.i, q.j, q.k
            )
            .expect("string write cannot fail");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("trajectory line {}: {e}", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            if fields.len() != 8 {
                return Err(Error::Parse(format!(
                    "trajectory line {}: expected 8 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let q = Quaternion::new(fields[4], fields[5], fields[6], fields[7]);
            let norm = q.norm();
            if norm < 1e-9 {
                return Err(Error::Parse(format!(
                    "trajectory line {}: degenerate quaternion",
                    lineno + 1
                )));
            }
            // Keep already-unit quaternions bit-exact so a save/load cycle is
            // lossless; only rescale genuinely denormalized input.
            let rotation = if (norm - 1.0).abs() < 1e-9 {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::new_normalize(q)
            };
            samples.push(TrajectorySample {
                timestamp: fields[0],
                pose: Se3::new(rotation, Vector3::new(fields[1], fields[2], fields[3])),
            });
        }
        Ok(Trajectory { samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Trajectory::from_text(&std::fs::read_to_string(path)?)
    }
}
