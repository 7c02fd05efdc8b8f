//! Volume rendering: ray generation, stratified sampling along rays, and
//! alpha compositing of field outputs — both a plain reference path and a
//! tape-staged differentiable path that must agree with it.

mod composite;
mod image;

pub use composite::{composite, composite_staged, RayOutputs, StagedRayBatch};
pub use image::{
    build_ray_inputs, render_image, stage_embedding, EmbedSource, RayBatchInputs, RenderedImage,
    StagedQuery,
};

use crate::geom::Vec3;
use crate::scene::{render::ray_box, SceneModel};

/// World ray clipped to the region the field models.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// Degenerate ray (empty interval): composites to pure background.
    pub fn empty(origin: Vec3, dir: Vec3) -> Self {
        Ray {
            origin,
            dir,
            t_near: 0.0,
            t_far: 0.0,
        }
    }
}

/// Affine map from world coordinates into the field's input cube.
///
/// The scene's xy extent maps to [-1, 1]; z shares the same scale so the
/// field sees consistent units in all axes.
#[derive(Clone, Copy, Debug)]
pub struct WorldMap {
    pub center: Vec3,
    pub scale: f64,
}

impl WorldMap {
    pub fn for_scene(scene: &SceneModel) -> Self {
        let (lo, hi) = scene.bounds();
        WorldMap {
            center: (lo + hi) * 0.5,
            scale: scene.extent * 0.5,
        }
    }

    pub fn to_field(&self, p: Vec3) -> [f64; 3] {
        [
            (p.x - self.center.x) / self.scale,
            (p.y - self.center.y) / self.scale,
            (p.z - self.center.z) / self.scale,
        ]
    }
}

/// Clip a camera ray against the (slightly padded) scene bounds.
pub fn clip_ray(scene: &SceneModel, origin: Vec3, dir: Vec3) -> Ray {
    let (lo, hi) = scene.bounds();
    let pad = scene.extent * 0.05;
    let lo = lo - Vec3 { x: pad, y: pad, z: pad };
    let hi = hi + Vec3 { x: pad, y: pad, z: pad };
    match ray_box(origin, dir, lo, hi) {
        Some((t0, t1)) if t1 > t0 => Ray {
            origin,
            dir,
            t_near: t0,
            t_far: t1,
        },
        _ => Ray::empty(origin, dir),
    }
}

/// Stratified sample positions and inter-sample distances along a ray.
///
/// One sample per equal-width bin; `jitter[i]` in [0,1) places the sample
/// within its bin (0.5 everywhere gives deterministic midpoints). The last
/// delta runs to the far clip so the intervals tile [t_near, t_far].
pub fn sample_ray(ray: &Ray, n: usize, jitter: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(jitter.len(), n, "one jitter value per sample");
    let h = (ray.t_far - ray.t_near) / n as f64;
    let ts: Vec<f64> = (0..n)
        .map(|i| ray.t_near + (i as f64 + jitter[i]) * h)
        .collect();
    let deltas: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 < n {
                ts[i + 1] - ts[i]
            } else {
                ray.t_far - ts[i]
            }
        })
        .collect();
    (ts, deltas)
}

/// Midpoint jitter for deterministic evaluation rendering.
pub fn midpoints(n: usize) -> Vec<f64> {
    vec![0.5; n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::vec3;
    use crate::scene::gen_terrain;

    #[test]
    fn samples_tile_the_interval() {
        let ray = Ray {
            origin: vec3(0.0, 0.0, 10.0),
            dir: vec3(0.0, 0.0, -1.0),
            t_near: 2.0,
            t_far: 10.0,
        };
        let (ts, deltas) = sample_ray(&ray, 8, &midpoints(8));
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert!(ts[0] >= ray.t_near && *ts.last().unwrap() <= ray.t_far);
        let covered: f64 = deltas.iter().sum::<f64>() + (ts[0] - ray.t_near);
        assert!((covered - 8.0).abs() < 1e-12);
    }

    #[test]
    fn world_map_normalizes_scene_extent() {
        let scene = gen_terrain(1, 32, 10.0).unwrap();
        let wm = WorldMap::for_scene(&scene);
        let p = wm.to_field(vec3(0.0, scene.extent, 0.0));
        assert!((p[0] - -1.0).abs() < 1e-12);
        assert!((p[1] - 1.0).abs() < 1e-12);
        for v in wm.to_field(vec3(50.0, 50.0, 5.0)) {
            assert!(v.abs() <= 1.0);
        }
    }

    #[test]
    fn ray_missing_the_scene_is_empty() {
        let scene = gen_terrain(2, 32, 5.0).unwrap();
        let r = clip_ray(&scene, vec3(50.0, 50.0, 300.0), vec3(0.0, 0.0, 1.0));
        assert_eq!(r.t_near, r.t_far);
        let hit = clip_ray(&scene, vec3(50.0, 50.0, 300.0), vec3(0.0, 0.0, -1.0));
        assert!(hit.t_far > hit.t_near);
    }
}
