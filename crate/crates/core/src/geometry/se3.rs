//! Rigid body transforms on SE(3).
//!
//! A pose is stored as a unit quaternion plus a translation vector. Twists use
//! the ordering `xi = [rho, omega]` (translation part first), and the
//! exponential follows the closed-form Rodrigues construction:
//!
//! ```text
//! R = I + sin(t)/t [w]x + (1 - cos(t))/t^2 [w]x^2        t = |omega|
//! p = V rho,  V = I + (1 - cos(t))/t^2 [w]x + (t - sin(t))/t^3 [w]x^2
//! ```
//!
//! The logarithm is implemented independently (quaternion log plus the closed
//! form of `V^-1`), so exp/log round trips are a meaningful self-check rather
//! than a tautology. Solvers apply updates by left multiplication:
//! `T <- exp(dxi) * T`.

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Angle threshold below which the Rodrigues coefficients switch to their
/// Taylor series.
const SMALL_ANGLE: f64 = 1e-6;

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A rigid transform, rotation stored as a unit quaternion.
///
/// When used as a body pose, `Se3` maps body-frame points into the world
/// frame. When used as a rig extrinsic it maps camera-frame points into the
/// body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Se3 {
    pub fn identity() -> Self {
        Se3 {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Se3 {
            rotation,
            translation,
        }
    }

    pub fn from_rt(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_matrix(&rotation);
        Se3::new(q, translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self * other`, i.e. apply `other` first.
    pub fn compose(&self, other: &Se3) -> Se3 {
        Se3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Se3 {
        let rot_inv = self.rotation.inverse();
        Se3 {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotate a direction without translating it.
    pub fn rotate(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    /// Exponential map. `xi = [rho, omega]`.
    pub fn exp(xi: &Vector6<f64>) -> Se3 {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let omega = Vector3::new(xi[3], xi[4], xi[5]);
        let theta = omega.norm();

        let rotation = UnitQuaternion::from_scaled_axis(omega);

        let (b, c) = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            // (1 - cos t)/t^2 and (t - sin t)/t^3.
            (0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
        } else {
            let t2 = theta * theta;
            ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
        };

        let w = skew(&omega);
        let v = Matrix3::identity() + b * w + c * (w * w);
        Se3 {
            rotation,
            translation: v * rho,
        }
    }

    /// Logarithm map, inverse of [`Se3::exp`]. Returns `[rho, omega]`.
    pub fn log(&self) -> Vector6<f64> {
        let omega = self.rotation.scaled_axis();
        let theta = omega.norm();

        // Closed form of V^-1: I - 1/2 [w]x + k [w]x^2 with
        // k = 1/t^2 - (1 + cos t) / (2 t sin t).
        let k = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / (theta * theta)
        };

        let w = skew(&omega);
        let v_inv = Matrix3::identity() - 0.5 * w + k * (w * w);
        let rho = v_inv * self.translation;

        Vector6::new(rho.x, rho.y, rho.z, omega.x, omega.y, omega.z)
    }

    /// Left-multiplicative retraction used by the solvers.
    pub fn retract(&self, dxi: &Vector6<f64>) -> Se3 {
        Se3::exp(dxi).compose(self)
    }

    /// Renormalize the quaternion. Composition chains drift at the 1e-16
    /// level per op; long pipelines call this at checkpoint boundaries.
    pub fn renormalized(&self) -> Se3 {
        Se3 {
            rotation: UnitQuaternion::new_normalize(*self.rotation.quaternion()),
            translation: self.translation,
        }
    }
}

impl Default for Se3 {
    fn default() -> Self {
        Se3::identity()
    }
}

impl std::ops::Mul for Se3 {
    type Output = Se3;
    fn mul(self, rhs: Se3) -> Se3 {
        self.compose(&rhs)
    }
}
