//! Multi-camera rig calibration.
//!
//! Each camera carries pinhole intrinsics and an extrinsic `T_CB` that maps
//! camera-frame points into the shared body frame: `p_B = T_CB * p_C`. The rig
//! is serialized as JSON with quaternions in `[w, x, y, z]` order:
//!
//! ```json
//! {"cameras": [{"id": 0, "fx": 60.0, "fy": 60.0, "cx": 32.0, "cy": 24.0,
//!               "width": 64, "height": 48,
//!               "q_CB": [1.0, 0.0, 0.0, 0.0], "t_CB": [0.0, 0.0, 0.0]}]}
//! ```

use crate::error::{Error, Result};
use crate::geometry::{Pinhole, Se3};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub type CamId = usize;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigCamera {
    pub id: CamId,
    pub intrinsics: Pinhole,
    /// Camera-to-body extrinsic.
    pub cam_to_body: Se3,
}

/// Note on serde: the derived impls serve internal snapshots; the rig *file*
/// format goes through [`Rig::to_json_string`]/[`Rig::from_json_str`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rig {
    cameras: Vec<RigCamera>,
}

#[derive(Serialize, Deserialize)]
struct RigCameraJson {
    id: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    #[serde(rename = "q_CB")]
    q_cb: [f64; 4],
    #[serde(rename = "t_CB")]
    t_cb: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct RigJson {
    cameras: Vec<RigCameraJson>,
}

impl Rig {
    pub fn new(cameras: Vec<RigCamera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::invalid("rig must contain at least one camera"));
        }
        for (n, cam) in cameras.iter().enumerate() {
            if cameras[..n].iter().any(|c| c.id == cam.id) {
                return Err(Error::invalid(format!("duplicate camera id {}", cam.id)));
            }
        }
        Ok(Rig { cameras })
    }

    /// Single camera with identity extrinsics, the monocular degenerate case.
    pub fn monocular(intrinsics: Pinhole) -> Self {
        Rig {
            cameras: vec![RigCamera {
                id: 0,
                intrinsics,
                cam_to_body: Se3::identity(),
            }],
        }
    }

    pub fn cameras(&self) -> &[RigCamera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn camera(&self, id: CamId) -> Result<&RigCamera> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::invalid(format!("camera id {id} not in rig")))
    }

    pub fn to_json_string(&self) -> String {
        let doc = RigJson {
            cameras: self
                .cameras
                .iter()
                .map(|c| {
                    let q = c.cam_to_body.rotation.quaternion();
                    RigCameraJson {
                        id: c.id,
                        fx: c.intrinsics.fx,
                        fy: c.intrinsics.fy,
                        cx: c.intrinsics.cx,
                        cy: c.intrinsics.cy,
                        width: c.intrinsics.width,
                        height: c.intrinsics.height,
                        q_cb: [q.w, q.i, q.j, q.k],
                        t_cb: [
                            c.cam_to_body.translation.x,
                            c.cam_to_body.translation.y,
                            c.cam_to_body.translation.z,
                        ],
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("rig serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: RigJson =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("rig json: {e}")))?;
        let mut cameras = Vec::with_capacity(doc.cameras.len());
        for c in doc.cameras {
            let q = Quaternion::new(c.q_cb[0], c.q_cb[1], c.q_cb[2], c.q_cb[3]);
            if q.norm() < 1e-9 {
                return Err(Error::invalid(format!(
                    "camera {}: q_CB is not a usable quaternion",
                    c.id
                )));
            }
            cameras.push(RigCamera {
                id: c.id,
                intrinsics: Pinhole::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height)?,
                cam_to_body: Se3::new(
                    UnitQuaternion::new_normalize(q),
                    Vector3::new(c.t_cb[0], c.t_cb[1], c.t_cb[2]),
                ),
            });
        }
        Rig::new(cameras)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Rig::from_json_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_camera_rig() -> Rig {
        let intr = Pinhole::new(60.0, 60.0, 32.0, 24.0, 64, 48).unwrap();
        Rig::new(vec![
            RigCamera {
                id: 0,
                intrinsics: intr,
                cam_to_body: Se3::identity(),
            },
            RigCamera {
                id: 1,
                intrinsics: intr,
                cam_to_body: Se3::new(
                    UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.5, 0.0)),
                    Vector3::new(0.2, 0.0, 0.01),
                ),
            },
        ])
        .unwrap()
    }

    #[test]
    fn json_round_trip_preserves_calibration() {
        let rig = two_camera_rig();
        let text = rig.to_json_string();
        let back = Rig::from_json_str(&text).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in rig.cameras().iter().zip(back.cameras()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.intrinsics, b.intrinsics);
            assert!((a.cam_to_body.translation - b.cam_to_body.translation).norm() < 1e-15);
            assert!(a.cam_to_body.rotation.angle_to(&b.cam_to_body.rotation) < 1e-12);
        }
    }

    #[test]
    fn q_cb_is_wxyz_order() {
        let rig = two_camera_rig();
        let doc: serde_json::Value = serde_json::from_str(&rig.to_json_string()).unwrap();
        let q = doc["cameras"][0]["q_CB"].as_array().unwrap();
        assert_eq!(q[0].as_f64().unwrap(), 1.0);
        assert_eq!(q[1].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let intr = Pinhole::new(60.0, 60.0, 32.0, 24.0, 64, 48).unwrap();
        let cam = RigCamera {
            id: 3,
            intrinsics: intr,
            cam_to_body: Se3::identity(),
        };
        assert!(Rig::new(vec![cam.clone(), cam]).is_err());
    }

    #[test]
    fn unknown_camera_lookup_fails() {
        assert!(two_camera_rig().camera(7).is_err());
    }
}
