//! Dataset assembly: disjoint initial / incremental / test splits over one
//! scene, with deliberately different viewing and sun geometry between the
//! initial and incremental pools.

use super::{render_view, Camera, SceneModel, ViewRecord};
use crate::error::{Error, Result};
use crate::geom::{dir_from_angles, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub fov_deg: f64,
    pub noise_level: f64,
    /// Camera distance from scene center, in extents.
    pub distance_factor: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            image_size: 32,
            fov_deg: 40.0,
            noise_level: 0.01,
            distance_factor: 1.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub initial: Vec<ViewRecord>,
    pub incremental: Vec<ViewRecord>,
    pub test: Vec<ViewRecord>,
}

impl DatasetSplit {
    pub fn train_views(&self) -> impl Iterator<Item = &ViewRecord> {
        self.initial.iter().chain(self.incremental.iter())
    }

    pub fn all_views(&self) -> impl Iterator<Item = &ViewRecord> {
        self.train_views().chain(self.test.iter())
    }

    /// Total number of distinct image indices (train + test).
    pub fn index_count(&self) -> usize {
        self.all_views().map(|v| v.index as usize + 1).max().unwrap_or(0)
    }

    pub fn n_initial(&self) -> usize {
        self.initial.len()
    }
}

struct ViewGeometry {
    azimuth: f64,
    elevation: f64,
    sun_azimuth: f64,
    sun_elevation: f64,
    nadir: bool,
}

fn camera_for(scene: &SceneModel, geo: &ViewGeometry, cfg: &DatasetConfig) -> Camera {
    let c = scene.center();
    let dist = scene.extent * cfg.distance_factor;
    let origin = if geo.nadir {
        crate::geom::vec3(c.x, c.y, c.z + dist)
    } else {
        c + dir_from_angles(geo.azimuth, geo.elevation) * dist
    };
    Camera::look_at(origin, c, cfg.fov_deg, cfg.image_size, cfg.image_size)
}

fn sun_for(geo: &ViewGeometry) -> Vec3 {
    dir_from_angles(geo.sun_azimuth, geo.sun_elevation)
}

/// Build the three disjoint splits. Initial views see the scene from one
/// azimuth half under high sun; incremental views come from the opposite
/// half under low sun, so naive finetuning has something to forget.
/// Indices run 0..n with initial views first (the embedding-freeze
/// boundary), then incremental, then test.
pub fn make_dataset(
    scene: &SceneModel,
    n_initial: usize,
    n_incremental: usize,
    n_test: usize,
    seed: u64,
    cfg: &DatasetConfig,
) -> Result<DatasetSplit> {
    if n_initial == 0 || n_incremental == 0 || n_test == 0 {
        return Err(Error::Config("all split counts must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xDA);

    let mut geos: Vec<ViewGeometry> = Vec::new();
    for k in 0..n_initial {
        let frac = k as f64 / n_initial as f64;
        geos.push(ViewGeometry {
            azimuth: frac * 170.0 + rng.gen_range(-8.0..8.0),
            elevation: rng.gen_range(50.0..68.0),
            sun_azimuth: 160.0 + rng.gen_range(-30.0..30.0),
            sun_elevation: rng.gen_range(55.0..75.0),
            nadir: false,
        });
    }
    for k in 0..n_incremental {
        let frac = k as f64 / n_incremental as f64;
        geos.push(ViewGeometry {
            azimuth: 185.0 + frac * 165.0 + rng.gen_range(-8.0..8.0),
            elevation: rng.gen_range(35.0..52.0),
            sun_azimuth: 20.0 + rng.gen_range(-30.0..30.0),
            sun_elevation: rng.gen_range(25.0..42.0),
            nadir: false,
        });
    }
    for k in 0..n_test {
        if k == 0 {
            // Dedicated nadir view for DSM/MAE evaluation.
            geos.push(ViewGeometry {
                azimuth: 0.0,
                elevation: 90.0,
                sun_azimuth: 120.0,
                sun_elevation: 55.0,
                nadir: true,
            });
        } else {
            let frac = k as f64 / n_test as f64;
            geos.push(ViewGeometry {
                azimuth: frac * 360.0 + rng.gen_range(-10.0..10.0),
                elevation: rng.gen_range(45.0..62.0),
                sun_azimuth: rng.gen_range(0.0..360.0),
                sun_elevation: rng.gen_range(40.0..65.0),
                nadir: false,
            });
        }
    }

    let mut views = Vec::with_capacity(geos.len());
    for (j, geo) in geos.iter().enumerate() {
        let cam = camera_for(scene, geo, cfg);
        let timestamp = match () {
            _ if j < n_initial => j as f64,
            _ if j < n_initial + n_incremental => 100.0 + (j - n_initial) as f64,
            _ => 200.0 + (j - n_initial - n_incremental) as f64,
        };
        views.push(render_view(
            scene,
            &cam,
            sun_for(geo),
            timestamp,
            cfg.noise_level,
            seed,
            j as u32,
        )?);
    }

    let test = views.split_off(n_initial + n_incremental);
    let incremental = views.split_off(n_initial);
    Ok(DatasetSplit {
        initial: views,
        incremental,
        test,
    })
}
