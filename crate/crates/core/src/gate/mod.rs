//! Uncertainty-gated fusion of the frozen base render and the corrected
//! composite render.
//!
//! The gate weighs the two color predictions per pixel; depth is never
//! fused — it always comes straight from the composite render, so gating
//! cannot perturb geometry metrics.

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::img::{ImageBuf, ScalarMap};
use crate::render::RenderedImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    /// Per-pixel gate from ground-truth errors (analysis only).
    Eval,
    /// Constant gate for deployment, where no ground truth exists.
    Deploy,
}

#[derive(Clone, Copy, Debug)]
pub struct GateConfig {
    /// Gate sharpness.
    pub lambda: f64,
    /// Constant gate used in deploy mode.
    pub fallback_gate: f64,
    /// Floor applied to beta before inverting into confidence.
    pub beta_floor: f64,
    pub mode: GateMode,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            lambda: 10.0,
            fallback_gate: 0.75,
            beta_floor: 1e-3,
            mode: GateMode::Eval,
        }
    }
}

/// Confidence from aggregated uncertainty: s = 1 / max(beta, floor).
pub fn confidence(beta: f64, floor: f64) -> f64 {
    1.0 / beta.max(floor)
}

/// Gate toward the composite: g = sigmoid(lambda * s * (e_base - e_res)).
/// Larger base error or higher confidence pushes g toward 1.
pub fn gate(lambda: f64, s: f64, e_base: f64, e_res: f64) -> f64 {
    sigmoid(lambda * s * (e_base - e_res))
}

/// Convex blend: g * composite + (1 - g) * base, per channel.
pub fn fuse(g: f64, c_res: [f64; 3], c_base: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = g * c_res[i] + (1.0 - g) * c_base[i];
    }
    out
}

fn pixel_sq_err(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Gated fusion result plus both contributing renders.
pub struct GatedRender {
    pub rgb: ImageBuf,
    /// Composite depth, passed through untouched.
    pub depth: ScalarMap,
    pub gate_map: ScalarMap,
    pub base: RenderedImage,
    pub res: RenderedImage,
}

/// Fuse two finished renders of the same view.
///
/// In eval mode the per-pixel gate compares both predictions against the
/// ground-truth image, with confidence taken from the composite's
/// uncertainty map; the sharpness is standardized by the image's mean beta
/// so one lambda works across differently calibrated fields. Deploy mode
/// uses the constant fallback gate everywhere.
pub fn fuse_renders(
    base: RenderedImage,
    res: RenderedImage,
    gt: Option<&ImageBuf>,
    cfg: &GateConfig,
) -> Result<GatedRender> {
    let (w, h) = (res.rgb.width, res.rgb.height);
    if base.rgb.width != w || base.rgb.height != h {
        return Err(Error::Dim("fuse_renders: image sizes differ".into()));
    }
    let mut rgb = ImageBuf::new(w, h);
    let mut gate_map = ScalarMap::new(w, h);
    let lambda_eff = cfg.lambda * res.mean_beta();
    for py in 0..h {
        for px in 0..w {
            let cb = base.rgb.pixel(px, py);
            let cr = res.rgb.pixel(px, py);
            let g = match cfg.mode {
                GateMode::Deploy => cfg.fallback_gate,
                GateMode::Eval => {
                    let gt = gt.ok_or_else(|| {
                        Error::Contract(
                            "eval-mode gating needs a ground-truth image".into(),
                        )
                    })?;
                    let truth = gt.pixel(px, py);
                    let s = confidence(res.beta.at(px, py), cfg.beta_floor);
                    gate(
                        lambda_eff,
                        s,
                        pixel_sq_err(cb, truth),
                        pixel_sq_err(cr, truth),
                    )
                }
            };
            gate_map.set(px, py, g);
            rgb.set_pixel(px, py, fuse(g, cr, cb));
        }
    }
    Ok(GatedRender {
        rgb,
        depth: res.depth.clone(),
        gate_map,
        base,
        res,
    })
}
