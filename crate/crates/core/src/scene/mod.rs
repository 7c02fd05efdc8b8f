//! Synthetic satellite-like scenes: procedural terrain, sun-lit shading,
//! and ground-truth views with exact depth.

pub mod camera;
pub mod dataset;
pub mod io;
pub mod render;
pub mod terrain;

pub use camera::Camera;
pub use dataset::{make_dataset, DatasetConfig, DatasetSplit};
pub use io::{load_dataset, load_scene, save_dataset, save_scene};
pub use render::render_view;
pub use terrain::gen_terrain;

use crate::geom::Vec3;
use crate::img::{ImageBuf, ScalarMap};
use sha2::{Digest, Sha256};

/// Ground-truth world: a heightfield with per-cell albedo.
/// World coordinates are meters, x/y in `[0, extent]`, z altitude.
#[derive(Clone, Debug)]
pub struct SceneModel {
    pub grid: usize,
    /// grid*grid altitudes (meters), row-major, y-major.
    pub heights: Vec<f64>,
    /// grid*grid*3 reflectances in [0,1].
    pub albedo: Vec<f64>,
    pub extent: f64,
    pub seed: u64,
}

impl SceneModel {
    /// Bilinear surface height at world (x, y); clamped at the borders.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.bilinear(&self.heights, 1, x, y)[0]
    }

    pub fn albedo_at(&self, x: f64, y: f64) -> [f64; 3] {
        let v = self.bilinear(&self.albedo, 3, x, y);
        [v[0], v[1], v[2]]
    }

    fn bilinear(&self, field: &[f64], ch: usize, x: f64, y: f64) -> [f64; 3] {
        let g = self.grid;
        let fx = (x / self.extent * (g - 1) as f64).clamp(0.0, (g - 1) as f64);
        let fy = (y / self.extent * (g - 1) as f64).clamp(0.0, (g - 1) as f64);
        let (ix, iy) = ((fx as usize).min(g - 2), (fy as usize).min(g - 2));
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let mut out = [0.0; 3];
        for c in 0..ch {
            let f = |a: usize, b: usize| field[(b * g + a) * ch + c];
            let top = f(ix, iy) * (1.0 - tx) + f(ix + 1, iy) * tx;
            let bot = f(ix, iy + 1) * (1.0 - tx) + f(ix + 1, iy + 1) * tx;
            out[c] = top * (1.0 - ty) + bot * ty;
        }
        out
    }

    /// Surface normal from central differences of the heightfield.
    pub fn normal_at(&self, x: f64, y: f64) -> Vec3 {
        let h = self.extent / (self.grid - 1) as f64;
        let dx = (self.height_at(x + h, y) - self.height_at(x - h, y)) / (2.0 * h);
        let dy = (self.height_at(x, y + h) - self.height_at(x, y - h)) / (2.0 * h);
        crate::geom::vec3(-dx, -dy, 1.0).normalized()
    }

    pub fn min_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn center(&self) -> Vec3 {
        crate::geom::vec3(
            self.extent / 2.0,
            self.extent / 2.0,
            (self.min_height() + self.max_height()) / 2.0,
        )
    }

    /// Horizontal grid spacing in meters.
    pub fn cell_size(&self) -> f64 {
        self.extent / (self.grid - 1) as f64
    }

    /// Identity hash over the exact height/albedo bytes; views carry it so
    /// splits can prove they observe the same scene.
    pub fn identity_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.grid.to_le_bytes());
        h.update(self.extent.to_le_bytes());
        for v in &self.heights {
            h.update(v.to_le_bytes());
        }
        for v in &self.albedo {
            h.update(v.to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }

    /// Axis-aligned bounds used for ray clipping and coordinate
    /// normalization: xy extent plus a small altitude margin.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let margin = 2.0;
        (
            crate::geom::vec3(0.0, 0.0, self.min_height() - margin),
            crate::geom::vec3(self.extent, self.extent, self.max_height() + margin),
        )
    }
}

/// One observation of the scene.
#[derive(Clone, Debug)]
pub struct ViewRecord {
    pub rgb: ImageBuf,
    /// Exact ray-surface distance per pixel (meters); negative = miss.
    pub depth_gt: ScalarMap,
    pub camera: Camera,
    pub sun_dir: Vec3,
    pub timestamp: f64,
    pub index: u32,
    pub scene_hash: u64,
}

impl ViewRecord {
    pub fn pixel_count(&self) -> usize {
        self.rgb.width * self.rgb.height
    }
}
