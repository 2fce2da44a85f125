use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Pinhole camera looking from `position` toward `look_at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub vfov_rad: f64,
    pub width: usize,
    pub height: usize,
}

/// Orthonormal camera frame: right, up, forward (world space).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFrame {
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "image must have nonzero area, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.vfov_rad > 0.0 && self.vfov_rad < std::f64::consts::PI) {
            return Err(Error::Config(format!("vfov {} outside (0, pi)", self.vfov_rad)));
        }
        let view = self.look_at - self.position;
        if view.norm() < 1e-12 || !view.is_finite() {
            return Err(Error::Config("camera position coincides with look_at".into()));
        }
        let up = self.up;
        if !up.is_finite() || (up.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("camera up {up:?} is not unit length")));
        }
        if view.normalize().cross(up).norm() < 1e-6 {
            return Err(Error::Config("camera up is parallel to the view axis".into()));
        }
        Ok(())
    }

    pub fn frame(&self) -> CameraFrame {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(self.up).normalize();
        let up = right.cross(forward);
        CameraFrame { right, up, forward }
    }

    /// Unit world-space ray direction through the center of pixel (row, col).
    pub fn ray_dir(&self, frame: &CameraFrame, row: usize, col: usize) -> Vec3 {
        let tan_half = (self.vfov_rad * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = ((col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * tan_half * aspect;
        let sy = (1.0 - (row as f64 + 0.5) / self.height as f64 * 2.0) * tan_half;
        (frame.forward + frame.right * sx + frame.up * sy).normalize()
    }

    /// Look-at pose with a world +z up hint, switching to +y near the poles.
    pub fn looking_at(position: Vec3, look_at: Vec3, vfov_rad: f64, width: usize, height: usize) -> Self {
        let view = (look_at - position).normalize();
        let up = if view.cross(Vec3::Z).norm() < 1e-3 { Vec3::Y } else { Vec3::Z };
        CameraPose {
            position,
            look_at,
            up,
            vfov_rad,
            width,
            height,
        }
    }

    pub fn rigidly_moved(&self, rotation: &Mat3, translation: Vec3) -> CameraPose {
        CameraPose {
            position: rotation.mul_vec(self.position) + translation,
            look_at: rotation.mul_vec(self.look_at) + translation,
            up: rotation.mul_vec(self.up),
            ..*self
        }
    }
}

impl CameraFrame {
    /// World → camera space (x right, y up, z toward the viewer).
    pub fn to_camera(&self, v: Vec3) -> Vec3 {
        Vec3::new(v.dot(self.right), v.dot(self.up), -v.dot(self.forward))
    }

    pub fn to_world(&self, v: Vec3) -> Vec3 {
        self.right * v.x + self.up * v.y - self.forward * v.z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_ray_points_forward() {
        let cam = CameraPose::looking_at(Vec3::new(0.0, -5.0, 1.0), Vec3::new(0.0, 0.0, 1.0), 0.8, 3, 3);
        cam.validate().unwrap();
        let f = cam.frame();
        assert!((cam.ray_dir(&f, 1, 1) - Vec3::Y).norm() < 1e-12);
        let v = Vec3::new(0.3, -0.2, 0.9).normalize();
        assert!((f.to_world(f.to_camera(v)) - v).norm() < 1e-15);
        // Camera-space z points back toward the viewer.
        assert!((f.to_camera(-Vec3::Y) - Vec3::Z).norm() < 1e-12);
    }

    #[test]
    fn invalid_poses() {
        let mut cam = CameraPose::looking_at(Vec3::new(0.0, 0.0, 5.0), Vec3::ZERO, 0.8, 4, 4);
        assert_eq!(cam.up, Vec3::Y);
        cam.validate().unwrap();
        cam.up = Vec3::Z;
        assert!(cam.validate().is_err());
        let zero = CameraPose::looking_at(Vec3::new(0.0, 1.0, 5.0), Vec3::ZERO, 0.8, 0, 4);
        assert!(matches!(zero.validate(), Err(Error::Config(_))));
    }
}
