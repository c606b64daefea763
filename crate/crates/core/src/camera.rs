//! Orbit cameras and their projection matrices.
//!
//! Axis convention, used everywhere in this crate: the world is right-handed
//! with +z up. A camera is parameterized by spherical coordinates around the
//! world origin and always looks at the origin. At azimuth 0°, elevation 0°
//! the camera center is at (0, -radius, 0); elevation +90° places it directly
//! above the origin on +z. The camera frame is x-right, y-down, z-forward
//! (forward pointing at the origin), so image rows grow downward.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Azimuth angle in degrees.
    pub azimuth: f64,
    /// Elevation angle in degrees.
    pub elevation: f64,
    /// Distance from the world origin, in scene units.
    pub radius: f64,
    /// Vertical field of view in degrees.
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// World-to-camera rigid transform plus pinhole intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraMatrices {
    pub world_to_camera: Matrix4<f64>,
    /// Rotation block of `world_to_camera`.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates.
    pub center: Vector3<f64>,
    pub intrinsics: Intrinsics,
}

impl Camera {
    pub fn new(azimuth: f64, elevation: f64, radius: f64, fov_y: f64, width: u32, height: u32) -> Self {
        Self {
            azimuth,
            elevation,
            radius,
            fov_y,
            width,
            height,
        }
    }

    /// Camera with the same pose rendered at `ratio` of the original
    /// resolution. The field of view is unchanged; intrinsics rescale with
    /// the pixel count.
    pub fn at_ratio(&self, ratio: f64) -> Camera {
        let width = ((self.width as f64 * ratio).round() as u32).max(1);
        let height = ((self.height as f64 * ratio).round() as u32).max(1);
        Camera { width, height, ..*self }
    }

    pub fn center(&self) -> Vector3<f64> {
        let a = self.azimuth.to_radians();
        let e = self.elevation.to_radians();
        Vector3::new(
            self.radius * e.cos() * a.sin(),
            -self.radius * e.cos() * a.cos(),
            self.radius * e.sin(),
        )
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let focal = self.height as f64 / (2.0 * (self.fov_y.to_radians() / 2.0).tan());
        Intrinsics {
            fx: focal,
            fy: focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
        }
    }
}

/// Build the world-to-camera transform and intrinsics for an orbit camera.
pub fn camera_matrices(cam: &Camera) -> CameraMatrices {
    let center = cam.center();
    let a = cam.azimuth.to_radians();
    let e = cam.elevation.to_radians();

    // Forward: unit vector from the camera center toward the origin.
    let forward = Vector3::new(-e.cos() * a.sin(), e.cos() * a.cos(), -e.sin());
    // Right: forward × world-up, with the analytic pole limit when the
    // camera sits on the z axis.
    let raw_right = forward.cross(&Vector3::new(0.0, 0.0, 1.0));
    let right = if raw_right.norm() < 1e-9 {
        Vector3::new(a.cos(), -a.sin(), 0.0)
    } else {
        raw_right / raw_right.norm()
    };
    let down = forward.cross(&right);

    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let t = -rotation * center;
    let mut world_to_camera = Matrix4::identity();
    world_to_camera.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
    world_to_camera.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);

    CameraMatrices {
        world_to_camera,
        rotation,
        center,
        intrinsics: cam.intrinsics(),
    }
}
