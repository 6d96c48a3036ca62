use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics with square pixels. Pixel `(u, v)` denotes column `u`,
/// row `v`; integer coordinates are pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(focal: f64, cu: f64, cv: f64, width: usize, height: usize) -> Result<Self> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(Error::Domain(format!("focal length must be positive, got {focal}")));
        }
        if !(cu > 0.0 && cu < width as f64 && cv > 0.0 && cv < height as f64) {
            return Err(Error::Domain(format!(
                "principal point ({cu}, {cv}) outside a {width}x{height} image"
            )));
        }
        Ok(Self {
            focal,
            cu,
            cv,
            width,
            height,
        })
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal, 0.0, self.cu, //
            0.0, self.focal, self.cv, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn k_inv(&self) -> Matrix3<f64> {
        let fi = 1.0 / self.focal;
        Matrix3::new(
            fi, 0.0, -self.cu * fi, //
            0.0, fi, -self.cv * fi, //
            0.0, 0.0, 1.0,
        )
    }

    /// Lifts pixel `(u, v)` with planar depth `z` (meters) into the camera frame.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cu) / self.focal * z, (v - self.cv) / self.focal * z, z)
    }

    /// Homogeneous projection `K p`; divide by the third component for pixels.
    #[inline]
    pub fn project_homogeneous(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.focal * p.x + self.cu * p.z,
            self.focal * p.y + self.cv * p.z,
            p.z,
        )
    }
}

/// Intrinsics of a simulator camera: `f = W / (2 tan(fov·π/360))`, principal
/// point at the image center.
pub fn intrinsics_from_fov(width: usize, height: usize, fov_degrees: f64) -> Result<CameraModel> {
    if width == 0 || height == 0 {
        return Err(Error::Domain(format!("image size {width}x{height} is empty")));
    }
    if !(fov_degrees > 0.0 && fov_degrees < 180.0) {
        return Err(Error::Domain(format!(
            "field of view must lie in (0, 180) degrees, got {fov_degrees}"
        )));
    }
    let focal = width as f64 / (2.0 * (fov_degrees * std::f64::consts::PI / 360.0).tan());
    CameraModel::new(focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ninety_degree_camera() {
        let cam = intrinsics_from_fov(512, 512, 90.0).unwrap();
        assert!((cam.focal - 256.0).abs() < 1e-12);
        assert_eq!(cam.cu, 256.0);
        assert_eq!(cam.cv, 256.0);
    }

    #[test]
    fn sixty_degree_camera() {
        let cam = intrinsics_from_fov(512, 512, 60.0).unwrap();
        let expected = 512.0 / (2.0 * (30.0f64).to_radians().tan());
        assert!((cam.focal - expected).abs() < 1e-9);
        assert!((cam.focal - 443.405_006_737_632_6).abs() < 1e-6);
    }

    #[test]
    fn degenerate_fov_is_rejected() {
        assert!(matches!(intrinsics_from_fov(512, 512, 180.0), Err(Error::Domain(_))));
        assert!(matches!(intrinsics_from_fov(512, 512, 0.0), Err(Error::Domain(_))));
        assert!(intrinsics_from_fov(0, 512, 90.0).is_err());
    }

    #[test]
    fn k_inverse_roundtrip() {
        let cam = intrinsics_from_fov(64, 48, 75.0).unwrap();
        let id = cam.k() * cam.k_inv();
        assert!((id - Matrix3::identity()).abs().max() < 1e-12);
    }
}
