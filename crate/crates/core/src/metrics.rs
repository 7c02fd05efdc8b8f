//! Image and geometry quality metrics.

use crate::error::{Error, Result};
use crate::img::{ImageBuf, ScalarMap};
use crate::scene::Camera;

/// PSNR ceiling reported when two images are exactly equal.
pub const PSNR_MAX: f64 = 99.0;

/// Peak signal-to-noise ratio in dB over all RGB channels (signal range 1).
pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dim("psnr: image sizes differ".into()));
    }
    let n = a.data.len() as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_MAX);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_MAX))
}

fn luma(img: &ImageBuf, x: usize, y: usize) -> f64 {
    let p = img.pixel(x, y);
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Structural similarity on luma with a 7x7 uniform window (valid windows
/// only), k1 = 0.01, k2 = 0.03, dynamic range 1.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dim("ssim: image sizes differ".into()));
    }
    const WIN: usize = 7;
    if a.width < WIN || a.height < WIN {
        return Err(Error::Contract(format!(
            "ssim needs at least {WIN}x{WIN} images"
        )));
    }
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let nw = (WIN * WIN) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=a.height - WIN {
        for wx in 0..=a.width - WIN {
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in 0..WIN {
                for dx in 0..WIN {
                    ma += luma(a, wx + dx, wy + dy);
                    mb += luma(b, wx + dx, wy + dy);
                }
            }
            ma /= nw;
            mb /= nw;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..WIN {
                for dx in 0..WIN {
                    let da = luma(a, wx + dx, wy + dy) - ma;
                    let db = luma(b, wx + dx, wy + dy) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= nw - 1.0;
            vb /= nw - 1.0;
            cov /= nw - 1.0;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean absolute elevation error between predicted and ground-truth depth,
/// evaluated in altitude space (depth is cast back to a surface height via
/// the camera ray). Pixels where either map misses are excluded.
pub fn mae_elevation(
    pred: &ScalarMap,
    gt: &ScalarMap,
    camera: &Camera,
) -> Result<f64> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Dim("mae: depth map sizes differ".into()));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for py in 0..pred.height {
        for px in 0..pred.width {
            if !pred.is_hit(px, py) || !gt.is_hit(px, py) {
                continue;
            }
            let dir_z = camera.ray_dir(px, py).z;
            let zp = camera.origin.z + dir_z * pred.at(px, py);
            let zg = camera.origin.z + dir_z * gt.at(px, py);
            total += (zp - zg).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Contract(
            "mae: no pixel has valid depth in both maps".into(),
        ));
    }
    Ok(total / n as f64)
}
