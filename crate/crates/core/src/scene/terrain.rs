//! Procedural heightfield terrain with material regions.

use super::SceneModel;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Value-noise octave: a coarse grid of uniform randoms, bilinearly
/// upsampled to the full resolution.
fn noise_octave(rng: &mut ChaCha8Rng, coarse: usize, grid: usize) -> Vec<f64> {
    let mut lattice = vec![0.0; (coarse + 1) * (coarse + 1)];
    for v in &mut lattice {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut out = vec![0.0; grid * grid];
    for y in 0..grid {
        for x in 0..grid {
            let fx = x as f64 / (grid - 1) as f64 * coarse as f64;
            let fy = y as f64 / (grid - 1) as f64 * coarse as f64;
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (ix, iy) = (ix.min(coarse - 1), iy.min(coarse - 1));
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            // Smoothstep keeps slopes continuous across lattice cells.
            let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
            let l = |a: usize, b: usize| lattice[b * (coarse + 1) + a];
            let top = l(ix, iy) * (1.0 - sx) + l(ix + 1, iy) * sx;
            let bot = l(ix, iy + 1) * (1.0 - sx) + l(ix + 1, iy + 1) * sx;
            out[y * grid + x] = top * (1.0 - sy) + bot * sy;
        }
    }
    out
}

const MATERIALS: [[f64; 3]; 3] = [
    [0.30, 0.42, 0.18], // vegetation
    [0.46, 0.42, 0.36], // rock
    [0.72, 0.65, 0.48], // sand
];

/// Deterministic synthetic scene: fractal relief plus 2-3 albedo regions.
pub fn gen_terrain(seed: u64, grid_size: usize, relief_amplitude: f64) -> Result<SceneModel> {
    if grid_size < 32 {
        return Err(Error::Config(format!(
            "grid_size {grid_size} below minimum 32"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xA0);

    let octaves = [(4usize, 1.0), (8, 0.5), (16, 0.25), (32, 0.12)];
    let mut heights = vec![0.0; grid_size * grid_size];
    for (coarse, amp) in octaves {
        let o = noise_octave(&mut rng, coarse, grid_size);
        for (h, v) in heights.iter_mut().zip(o) {
            *h += amp * v;
        }
    }
    let max_abs = heights.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    for h in &mut heights {
        *h *= relief_amplitude / max_abs;
    }

    // Material field from an independent noise channel, thresholded into
    // regions; always yields at least 2 distinct albedos.
    let mat_noise = noise_octave(&mut rng, 6, grid_size);
    let mut albedo = Vec::with_capacity(grid_size * grid_size * 3);
    for (i, m) in mat_noise.iter().enumerate() {
        let base = if *m < -0.2 {
            MATERIALS[0]
        } else if *m < 0.35 {
            MATERIALS[1]
        } else {
            MATERIALS[2]
        };
        // Small deterministic texture variation tied to position.
        let jitter = 0.04 * ((i as f64 * 0.61803).sin());
        for c in base {
            albedo.push((c + jitter).clamp(0.0, 1.0));
        }
    }

    let scene = SceneModel {
        grid: grid_size,
        heights,
        albedo,
        extent: 100.0,
        seed,
    };
    debug_assert!(scene.heights.iter().all(|h| h.is_finite()));
    Ok(scene)
}
