use serde::{Deserialize, Serialize};

use crate::mesh::{RigidTransform, Vec3};

/// Pinhole camera with OpenCV axes: x right, y down, z forward.
/// Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: RigidTransform,
}

impl Camera {
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Camera {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = nalgebra::Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            world_to_camera: RigidTransform::new(rotation, -(rotation * eye)),
        }
    }

    pub fn center(&self) -> Vec3 {
        self.world_to_camera.inverse().translation
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.world_to_camera.apply(p)
    }

    /// Direction in camera space (z = 1) through the center of pixel `(x, y)`.
    pub fn ray(&self, x: usize, y: usize) -> Vec3 {
        Vec3::new(
            (x as f64 + 0.5 - self.cx) / self.fx,
            (y as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Pixel coordinates of a camera-space point.
    pub fn project_camera(&self, p: &Vec3) -> [f64; 2] {
        [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
    }

    pub fn project(&self, world: &Vec3) -> [f64; 2] {
        self.project_camera(&self.to_camera(world))
    }

    /// Transposed Jacobian of `project_camera` applied to a pixel-space gradient.
    pub fn project_camera_backward(&self, p: &Vec3, g: [f64; 2]) -> Vec3 {
        let iz = 1.0 / p.z;
        Vec3::new(
            g[0] * self.fx * iz,
            g[1] * self.fy * iz,
            -(g[0] * self.fx * p.x + g[1] * self.fy * p.y) * iz * iz,
        )
    }
}
