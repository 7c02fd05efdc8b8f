//! Ground-truth rendering: exact ray/heightfield intersection with
//! Lambertian sun shading plus an ambient sky term.

use super::{Camera, SceneModel, ViewRecord};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::img::{ImageBuf, ScalarMap, MISS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SKY_RGB: [f64; 3] = [0.35, 0.42, 0.58];
const DIFFUSE: f64 = 0.85;
const AMBIENT: f64 = 0.22;

/// Clip a ray to an axis-aligned box; returns (t_enter, t_exit) if it hits.
pub fn ray_box(o: Vec3, d: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let mut t0: f64 = 1e-6;
    let mut t1 = f64::INFINITY;
    for (ov, dv, lov, hiv) in [
        (o.x, d.x, lo.x, hi.x),
        (o.y, d.y, lo.y, hi.y),
        (o.z, d.z, lo.z, hi.z),
    ] {
        if dv.abs() < 1e-12 {
            if ov < lov || ov > hiv {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = ((lov - ov) / dv, (hiv - ov) / dv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// First ray/surface intersection distance, or None if the ray clears the
/// terrain. March at half-cell resolution, then bisect the bracket.
pub fn intersect_surface(scene: &SceneModel, o: Vec3, d: Vec3) -> Option<f64> {
    let (lo, hi) = scene.bounds();
    let (t0, t1) = ray_box(o, d, lo, hi)?;
    let above = |t: f64| {
        let p = o + d * t;
        p.z - scene.height_at(p.x, p.y)
    };
    let step = scene.cell_size() * 0.5 / d.z.abs().max(0.2);
    let mut t_prev = t0;
    let mut f_prev = above(t0);
    if f_prev < 0.0 {
        // Ray starts below the surface inside the box.
        return Some(t0);
    }
    let mut t = t0 + step;
    while t < t1 + step {
        let tc = t.min(t1);
        let f = above(tc);
        if f <= 0.0 {
            // Bisect [t_prev, tc].
            let (mut a, mut b) = (t_prev, tc);
            for _ in 0..50 {
                let m = 0.5 * (a + b);
                if above(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        t_prev = tc;
        f_prev = f;
        if tc >= t1 {
            break;
        }
        t += step;
    }
    let _ = f_prev;
    None
}

/// Shade a surface point: Lambertian sun term plus ambient skylight.
pub fn shade(scene: &SceneModel, p: Vec3, sun_dir: Vec3) -> [f64; 3] {
    let n = scene.normal_at(p.x, p.y);
    let lambert = n.dot(sun_dir).max(0.0);
    let alb = scene.albedo_at(p.x, p.y);
    let mut c = [0.0; 3];
    for i in 0..3 {
        c[i] = (alb[i] * (DIFFUSE * lambert + AMBIENT * SKY_RGB[i])).clamp(0.0, 1.0);
    }
    c
}

/// Render one ground-truth view. Deterministic given all arguments.
///
/// Pixels whose rays miss the terrain get the sky color and a negative
/// depth sentinel; if every pixel misses, the camera does not look at the
/// scene and rendering fails.
pub fn render_view(
    scene: &SceneModel,
    camera: &Camera,
    sun_dir: Vec3,
    timestamp: f64,
    noise_level: f64,
    seed: u64,
    index: u32,
) -> Result<ViewRecord> {
    if (sun_dir.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract("sun_dir must be unit length".into()));
    }
    let mut rgb = ImageBuf::new(camera.width, camera.height);
    let mut depth = ScalarMap::new(camera.width, camera.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xB0 ^ index as u64);

    let mut hits = 0usize;
    for py in 0..camera.height {
        for px in 0..camera.width {
            let d = camera.ray_dir(px, py);
            let mut c = SKY_RGB;
            match intersect_surface(scene, camera.origin, d) {
                Some(t) => {
                    hits += 1;
                    depth.set(px, py, t);
                    c = shade(scene, camera.origin + d * t, sun_dir);
                }
                None => depth.set(px, py, MISS),
            }
            if noise_level > 0.0 {
                for v in &mut c {
                    // Box-Muller pair; one sample per channel is fine here.
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen::<f64>();
                    let n = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                    *v = (*v + noise_level * n).clamp(0.0, 1.0);
                }
            }
            rgb.set_pixel(px, py, c);
        }
    }
    if hits == 0 {
        return Err(Error::Contract("camera misses the scene entirely".into()));
    }
    Ok(ViewRecord {
        rgb,
        depth_gt: depth,
        camera: camera.clone(),
        sun_dir,
        timestamp,
        index,
        scene_hash: scene.identity_hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{dir_from_angles, vec3};
    use crate::scene::gen_terrain;

    fn nadir_cam(scene: &SceneModel, res: usize) -> Camera {
        let c = scene.center();
        Camera::look_at(vec3(c.x, c.y, 250.0), vec3(c.x, c.y, 0.0), 30.0, res, res)
    }

    #[test]
    fn zenith_sun_on_flat_terrain_is_uniform() {
        let scene = gen_terrain(1, 32, 0.0).unwrap();
        let cam = nadir_cam(&scene, 16);
        let v = render_view(&scene, &cam, vec3(0.0, 0.0, 1.0), 0.0, 0.0, 0, 0).unwrap();
        // n·u == 1 everywhere; intensity varies only with albedo regions,
        // so pixels sharing a material must match.
        let lum: Vec<f64> = (0..16)
            .map(|x| {
                let p = v.rgb.pixel(x, 8);
                p[0] + p[1] + p[2]
            })
            .collect();
        // Shading factor is constant: color/albedo ratio identical across
        // pixels. Compare two pixels with the same albedo by construction
        // (adjacent ones in the same region).
        assert!(lum.iter().all(|l| l.is_finite()));
        let center = scene.center();
        let a = shade(&scene, vec3(center.x, center.y, 0.0), vec3(0.0, 0.0, 1.0));
        let b = shade(&scene, vec3(center.x + 1.0, center.y, 0.0), vec3(0.0, 0.0, 1.0));
        let alb_a = scene.albedo_at(center.x, center.y);
        let alb_b = scene.albedo_at(center.x + 1.0, center.y);
        for i in 0..3 {
            assert!((a[i] / alb_a[i] - b[i] / alb_b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let scene = gen_terrain(5, 48, 10.0).unwrap();
        let cam = nadir_cam(&scene, 12);
        let sun = dir_from_angles(120.0, 50.0);
        let a = render_view(&scene, &cam, sun, 1.0, 0.02, 9, 3).unwrap();
        let b = render_view(&scene, &cam, sun, 1.0, 0.02, 9, 3).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.depth_gt, b.depth_gt);
    }

    #[test]
    fn grazing_sun_darkens_opposing_slopes() {
        let scene = gen_terrain(11, 64, 18.0).unwrap();
        let cam = nadir_cam(&scene, 32);
        let sun = dir_from_angles(0.0, 15.0); // grazing from +x
        let v = render_view(&scene, &cam, sun, 0.0, 0.0, 0, 0).unwrap();
        // Facing vs averted slopes, classified by the GT normal.
        let (mut lit, mut shaded) = (Vec::new(), Vec::new());
        for py in 0..32 {
            for px in 0..32 {
                let t = v.depth_gt.at(px, py);
                if t < 0.0 {
                    continue;
                }
                let p = cam.origin + cam.ray_dir(px, py) * t;
                let n = scene.normal_at(p.x, p.y);
                let pix = v.rgb.pixel(px, py);
                let mean = (pix[0] + pix[1] + pix[2]) / 3.0;
                if n.x > 0.25 {
                    lit.push(mean);
                } else if n.x < -0.25 {
                    shaded.push(mean);
                }
            }
        }
        assert!(!lit.is_empty() && !shaded.is_empty());
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(m(&lit) > m(&shaded) + 0.02, "lit {} shaded {}", m(&lit), m(&shaded));
    }

    #[test]
    fn camera_missing_scene_errors() {
        let scene = gen_terrain(2, 32, 5.0).unwrap();
        let cam = Camera::look_at(
            vec3(50.0, 50.0, 300.0),
            vec3(50.0, 50.0, 600.0), // looking up
            20.0,
            8,
            8,
        );
        assert!(render_view(&scene, &cam, vec3(0.0, 0.0, 1.0), 0.0, 0.0, 0, 0).is_err());
    }

    #[test]
    fn depth_reprojects_onto_surface() {
        let scene = gen_terrain(21, 64, 14.0).unwrap();
        let c = scene.center();
        let cam = Camera::look_at(vec3(-30.0, 20.0, 140.0), vec3(c.x, c.y, 0.0), 35.0, 24, 24);
        let v = render_view(&scene, &cam, dir_from_angles(200.0, 60.0), 0.0, 0.0, 0, 0).unwrap();
        let tol = scene.cell_size() * 0.5;
        let mut checked = 0;
        for py in 0..24 {
            for px in 0..24 {
                let t = v.depth_gt.at(px, py);
                if t < 0.0 {
                    continue;
                }
                let p = cam.origin + cam.ray_dir(px, py) * t;
                if p.x < 1.0 || p.y < 1.0 || p.x > scene.extent - 1.0 || p.y > scene.extent - 1.0 {
                    continue; // border cells clip against the box walls
                }
                assert!(
                    (p.z - scene.height_at(p.x, p.y)).abs() <= tol,
                    "pixel ({px},{py}): dz = {}",
                    (p.z - scene.height_at(p.x, p.y)).abs()
                );
                checked += 1;
            }
        }
        assert!(checked > 100);
    }
}
