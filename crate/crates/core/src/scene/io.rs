//! On-disk layout for scenes and datasets.
//!
//! ```text
//! <dir>/scene.json          grid / extent / seed / identity hash
//! <dir>/scene_heights.bin   headered flat f64 (grid x grid x 1)
//! <dir>/scene_albedo.bin    headered flat f64 (grid x grid x 3)
//! <dir>/split.json          view indices per split
//! <dir>/views/view_NNN/rgb.png      16-bit PNG
//! <dir>/views/view_NNN/depth.bin    headered flat f64
//! <dir>/views/view_NNN/meta.json    camera, sun, timestamp, index, hash
//! ```

use super::{Camera, DatasetSplit, SceneModel, ViewRecord};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::img::{read_f64_bin, write_f64_bin, ImageBuf, ScalarMap};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    grid: usize,
    extent: f64,
    seed: u64,
    identity_hash: u64,
}

#[derive(Serialize, Deserialize)]
struct ViewMeta {
    camera: Camera,
    sun_dir: Vec3,
    timestamp: f64,
    index: u32,
    scene_hash: u64,
}

#[derive(Serialize, Deserialize)]
struct SplitMeta {
    initial: Vec<u32>,
    incremental: Vec<u32>,
    test: Vec<u32>,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v)
        .map_err(|e| Error::Config(format!("json encode: {e}")))?;
    std::fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'a> Deserialize<'a>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn save_scene(dir: &Path, scene: &SceneModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(
        &dir.join("scene.json"),
        &SceneMeta {
            grid: scene.grid,
            extent: scene.extent,
            seed: scene.seed,
            identity_hash: scene.identity_hash(),
        },
    )?;
    write_f64_bin(&dir.join("scene_heights.bin"), scene.grid, scene.grid, 1, &scene.heights)?;
    write_f64_bin(&dir.join("scene_albedo.bin"), scene.grid, scene.grid, 3, &scene.albedo)?;
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<SceneModel> {
    let meta: SceneMeta = read_json(&dir.join("scene.json"))?;
    let (r, c, ch, heights) = read_f64_bin(&dir.join("scene_heights.bin"))?;
    if (r, c, ch) != (meta.grid, meta.grid, 1) {
        return Err(Error::Config("scene_heights.bin dims mismatch".into()));
    }
    let (r, c, ch, albedo) = read_f64_bin(&dir.join("scene_albedo.bin"))?;
    if (r, c, ch) != (meta.grid, meta.grid, 3) {
        return Err(Error::Config("scene_albedo.bin dims mismatch".into()));
    }
    let scene = SceneModel {
        grid: meta.grid,
        heights,
        albedo,
        extent: meta.extent,
        seed: meta.seed,
    };
    if scene.identity_hash() != meta.identity_hash {
        return Err(Error::Invariant("scene payload does not match its identity hash".into()));
    }
    Ok(scene)
}

fn view_dir(dir: &Path, index: u32) -> std::path::PathBuf {
    dir.join("views").join(format!("view_{index:03}"))
}

pub fn save_view(dir: &Path, view: &ViewRecord) -> Result<()> {
    let vd = view_dir(dir, view.index);
    std::fs::create_dir_all(&vd)?;
    view.rgb.save_png(&vd.join("rgb.png"))?;
    write_f64_bin(
        &vd.join("depth.bin"),
        view.depth_gt.height,
        view.depth_gt.width,
        1,
        &view.depth_gt.data,
    )?;
    write_json(
        &vd.join("meta.json"),
        &ViewMeta {
            camera: view.camera.clone(),
            sun_dir: view.sun_dir,
            timestamp: view.timestamp,
            index: view.index,
            scene_hash: view.scene_hash,
        },
    )
}

pub fn load_view(dir: &Path, index: u32) -> Result<ViewRecord> {
    let vd = view_dir(dir, index);
    let meta: ViewMeta = read_json(&vd.join("meta.json"))?;
    let rgb = ImageBuf::load_png(&vd.join("rgb.png"))?;
    let (h, w, ch, data) = read_f64_bin(&vd.join("depth.bin"))?;
    if ch != 1 || (w, h) != (rgb.width, rgb.height) {
        return Err(Error::Config("depth.bin dims mismatch".into()));
    }
    Ok(ViewRecord {
        rgb,
        depth_gt: ScalarMap { width: w, height: h, data },
        camera: meta.camera,
        sun_dir: meta.sun_dir,
        timestamp: meta.timestamp,
        index: meta.index,
        scene_hash: meta.scene_hash,
    })
}

pub fn save_dataset(dir: &Path, scene: &SceneModel, split: &DatasetSplit) -> Result<()> {
    save_scene(dir, scene)?;
    for v in split.all_views() {
        save_view(dir, v)?;
    }
    write_json(
        &dir.join("split.json"),
        &SplitMeta {
            initial: split.initial.iter().map(|v| v.index).collect(),
            incremental: split.incremental.iter().map(|v| v.index).collect(),
            test: split.test.iter().map(|v| v.index).collect(),
        },
    )
}

pub fn load_dataset(dir: &Path) -> Result<(SceneModel, DatasetSplit)> {
    let scene = load_scene(dir)?;
    let meta: SplitMeta = read_json(&dir.join("split.json"))?;
    let load_all = |ids: &[u32]| -> Result<Vec<ViewRecord>> {
        ids.iter().map(|&i| load_view(dir, i)).collect()
    };
    let split = DatasetSplit {
        initial: load_all(&meta.initial)?,
        incremental: load_all(&meta.incremental)?,
        test: load_all(&meta.test)?,
    };
    let h = scene.identity_hash();
    if !split.all_views().all(|v| v.scene_hash == h) {
        return Err(Error::Invariant("dataset mixes views from different scenes".into()));
    }
    Ok((scene, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{gen_terrain, make_dataset, DatasetConfig};

    #[test]
    fn dataset_roundtrip() {
        let scene = gen_terrain(3, 32, 8.0).unwrap();
        let cfg = DatasetConfig {
            image_size: 8,
            ..DatasetConfig::default()
        };
        let ds = make_dataset(&scene, 2, 2, 1, 4, &cfg).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        save_dataset(tmp.path(), &scene, &ds).unwrap();
        let (scene2, ds2) = load_dataset(tmp.path()).unwrap();
        assert_eq!(scene.heights, scene2.heights);
        assert_eq!(ds.initial.len(), ds2.initial.len());
        let a = &ds.test[0];
        let b = &ds2.test[0];
        assert_eq!(a.depth_gt, b.depth_gt); // depth is exact f64
        assert_eq!(a.camera, b.camera);
        // PNG is 16-bit quantized.
        for (x, y) in a.rgb.data.iter().zip(&b.rgb.data) {
            assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }
}
