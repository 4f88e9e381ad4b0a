//! Similarity transforms, used when aligning trajectories that differ by a
//! global scale in addition to a rigid motion.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// `p -> scale * (R p) + t`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Sim3 {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn inverse(&self) -> Sim3 {
        let rot_inv = self.rotation.inverse();
        let s_inv = 1.0 / self.scale;
        Sim3 {
            scale: s_inv,
            rotation: rot_inv,
            translation: -s_inv * (rot_inv * self.translation),
        }
    }
}

impl Default for Sim3 {
    fn default() -> Self {
        Sim3::identity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let s = Sim3 {
            scale: 2.5,
            rotation: UnitQuaternion::from_scaled_axis(Vector3::new(0.3, -0.2, 0.9)),
            translation: Vector3::new(1.0, -4.0, 2.0),
        };
        let p = Vector3::new(0.7, 1.3, -2.2);
        let q = s.inverse().transform(&s.transform(&p));
        assert!((q - p).norm() < 1e-12);
    }
}
