//! Pinhole camera at high elevation, standing in for satellite RPC models.

use crate::geom::{vec3, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub origin: Vec3,
    pub right: Vec3,
    pub down: Vec3,
    pub forward: Vec3,
    /// Focal length in pixels.
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `origin` looking at `target`, vertical field of view in
    /// degrees. Orientation is built against world-up with a fallback for
    /// nadir (straight-down) views.
    pub fn look_at(origin: Vec3, target: Vec3, fov_deg: f64, width: usize, height: usize) -> Camera {
        let forward = (target - origin).normalized();
        let world_up = vec3(0.0, 0.0, 1.0);
        let right = {
            let r = forward.cross(world_up);
            if r.norm() < 1e-9 {
                // Nadir view: pick +x as the image right axis.
                vec3(1.0, 0.0, 0.0)
            } else {
                r.normalized()
            }
        };
        let down = forward.cross(right).normalized();
        let focal_px = height as f64 / 2.0 / (fov_deg.to_radians() / 2.0).tan();
        Camera {
            origin,
            right,
            down,
            forward,
            focal_px,
            width,
            height,
        }
    }

    /// Unit ray direction through the center of pixel (px, py).
    pub fn ray_dir(&self, px: usize, py: usize) -> Vec3 {
        let u = px as f64 + 0.5 - self.width as f64 / 2.0;
        let v = py as f64 + 0.5 - self.height as f64 / 2.0;
        (self.forward * self.focal_px + self.right * u + self.down * v).normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_ray_points_forward() {
        let c = Camera::look_at(vec3(0.0, 0.0, 100.0), vec3(50.0, 50.0, 0.0), 40.0, 9, 9);
        let d = c.ray_dir(4, 4);
        assert!(d.dot(c.forward) > 0.999);
    }

    #[test]
    fn nadir_orientation_is_well_defined() {
        let c = Camera::look_at(vec3(50.0, 50.0, 200.0), vec3(50.0, 50.0, 0.0), 30.0, 8, 8);
        assert!(c.right.is_finite() && c.down.is_finite());
        assert!((c.right.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frame_is_orthonormal() {
        let c = Camera::look_at(vec3(10.0, -20.0, 80.0), vec3(50.0, 50.0, 5.0), 35.0, 16, 16);
        assert!(c.right.dot(c.down).abs() < 1e-12);
        assert!(c.right.dot(c.forward).abs() < 1e-12);
        assert!((c.down.norm() - 1.0).abs() < 1e-12);
    }
}
