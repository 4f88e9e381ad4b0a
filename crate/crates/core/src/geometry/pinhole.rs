//! Pinhole camera model with an explicit validity flag on projection.
//!
//! Points are considered in front of the camera when `z > Z_MIN`; projections
//! landing outside `[0, w-1] x [0, h-1]` are returned but flagged invalid so
//! callers can decide whether to discard them.

use crate::error::{Error, Result};
use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Minimum depth in front of the camera for a projection to be valid.
pub const Z_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pinhole {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Projection result. `pixel` is meaningful only when `valid` is true, except
/// for the out-of-bounds case where the pixel is still the true image-plane
/// location.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    /// Depth of the point in the camera frame (z coordinate).
    pub depth: f64,
    pub valid: bool,
}

impl Pinhole {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "pinhole intrinsics must have positive focal lengths and non-zero size, got fx={fx} fy={fy} {width}x{height}"
            )));
        }
        Ok(Pinhole {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }

    /// Project a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        if p.z <= Z_MIN {
            return Projection {
                pixel: Vector2::zeros(),
                depth: p.z,
                valid: false,
            };
        }
        let pixel = Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy);
        Projection {
            pixel,
            depth: p.z,
            valid: self.contains(&pixel),
        }
    }

    /// Back-project a pixel at the given inverse depth into the camera frame.
    pub fn backproject(&self, pixel: &Vector2<f64>, inv_depth: f64) -> Result<Vector3<f64>> {
        if !(inv_depth > 0.0) {
            return Err(Error::invalid(format!(
                "backproject requires positive inverse depth, got {inv_depth}"
            )));
        }
        Ok(self.ray_dir(pixel) / inv_depth)
    }

    /// Unnormalized ray direction through a pixel, z component fixed to 1.
    pub fn ray_dir(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// Jacobian of the projection with respect to the camera-frame point.
    pub fn project_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> Pinhole {
        Pinhole::new(100.0, 100.0, 50.0, 50.0, 200, 200).unwrap()
    }

    #[test]
    fn principal_ray_lands_on_principal_point() {
        let p = intr().project(&Vector3::new(0.0, 0.0, 1.0));
        assert!(p.valid);
        assert!((p.pixel - Vector2::new(50.0, 50.0)).norm() < 1e-12);
    }

    #[test]
    fn unit_offset_point() {
        let p = intr().project(&Vector3::new(1.0, 0.0, 2.0));
        assert!(p.valid);
        assert!((p.pixel - Vector2::new(100.0, 50.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_is_invalid() {
        assert!(!intr().project(&Vector3::new(0.0, 0.0, -1.0)).valid);
        assert!(!intr().project(&Vector3::new(0.0, 0.0, 0.0)).valid);
        assert!(!intr().project(&Vector3::new(0.0, 0.0, Z_MIN)).valid);
    }

    #[test]
    fn out_of_bounds_is_invalid_but_reported() {
        let p = intr().project(&Vector3::new(4.0, 0.0, 1.0));
        assert!(!p.valid);
        assert!((p.pixel.x - 450.0).abs() < 1e-12);
    }

    #[test]
    fn backproject_project_round_trip() {
        let intr = intr();
        let pixel = Vector2::new(73.5, 121.25);
        let p = intr.backproject(&pixel, 0.4).unwrap();
        assert!((p.z - 2.5).abs() < 1e-12);
        let proj = intr.project(&p);
        assert!(proj.valid);
        assert!((proj.pixel - pixel).norm() < 1e-10);
    }

    #[test]
    fn backproject_rejects_nonpositive_inverse_depth() {
        assert!(intr().backproject(&Vector2::new(10.0, 10.0), 0.0).is_err());
        assert!(intr().backproject(&Vector2::new(10.0, 10.0), -1.0).is_err());
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let intr = intr();
        let p = Vector3::new(0.3, -0.2, 1.7);
        let jac = intr.project_jacobian(&p);
        let eps = 1e-6;
        for k in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[k] += eps;
            lo[k] -= eps;
            let dp = (intr.project(&hi).pixel - intr.project(&lo).pixel) / (2.0 * eps);
            assert!((dp - jac.column(k)).norm() < 1e-6);
        }
    }
}
