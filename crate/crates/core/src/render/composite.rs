//! Alpha compositing along rays.
//!
//! `composite` is the plain reference implementation; `composite_staged`
//! runs the same arithmetic through the tape for training. The two must
//! agree to the last bit on identical inputs.

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{Error, Result};

/// Floor on accumulated opacity when normalizing expected depth.
pub const ACC_FLOOR: f64 = 1e-8;

/// Per-ray compositing results from the reference path.
#[derive(Clone, Debug)]
pub struct RayOutputs {
    pub color: [f64; 3],
    /// Expected hit distance, normalized by accumulated opacity.
    pub depth: f64,
    /// Total opacity sum(w_i) in [0, 1].
    pub acc: f64,
    /// Opacity-weighted uncertainty sum(w_i * beta_i).
    pub beta: f64,
    pub weights: Vec<f64>,
    /// Transmittance before each sample, T_0 = 1.
    pub trans: Vec<f64>,
}

/// Reference compositor for one ray. `background` fills the residual
/// transmittance (1 - acc).
pub fn composite(
    sigmas: &[f64],
    colors: &[[f64; 3]],
    betas: &[f64],
    ts: &[f64],
    deltas: &[f64],
    background: [f64; 3],
) -> Result<RayOutputs> {
    let n = sigmas.len();
    if colors.len() != n || betas.len() != n || ts.len() != n || deltas.len() != n {
        return Err(Error::Dim("composite: per-sample arrays disagree".into()));
    }
    let mut weights = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n);
    let mut t_cur = 1.0;
    for i in 0..n {
        let alpha = 1.0 - (-sigmas[i] * deltas[i]).exp();
        trans.push(t_cur);
        weights.push(t_cur * alpha);
        t_cur *= 1.0 - alpha;
    }
    let mut color = [0.0; 3];
    let (mut acc, mut beta, mut wt) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let w = weights[i];
        for c in 0..3 {
            color[c] += w * colors[i][c];
        }
        acc += w;
        beta += w * betas[i];
        wt += w * ts[i];
    }
    for c in 0..3 {
        color[c] += (1.0 - acc) * background[c];
    }
    let depth = wt / acc.max(ACC_FLOOR);
    Ok(RayOutputs {
        color,
        depth,
        acc,
        beta,
        weights,
        trans,
    })
}

/// Tape nodes for a compositing pass over B rays of N samples each.
pub struct StagedRayBatch {
    /// (B,3) composited color including background fill.
    pub color: ValueId,
    /// (B) expected depth, opacity-normalized. Never gated or fused.
    pub depth: ValueId,
    /// (B) accumulated opacity.
    pub acc: ValueId,
    /// (B) aggregated uncertainty.
    pub beta: ValueId,
    /// (B,N) per-sample weights.
    pub weights: ValueId,
}

/// Differentiable compositor.
///
/// `sigma`/`rgb`/`beta` are (B*N,1)/(B*N,3)/(B*N,1) in ray-major order,
/// `deltas`/`ts` constant (B,N) tensors, `background` a (B,3) tape value.
pub fn composite_staged(
    t: &mut Tape,
    sigma: ValueId,
    rgb: ValueId,
    beta: ValueId,
    ts: &Tensor,
    deltas: &Tensor,
    background: ValueId,
    n: usize,
) -> Result<StagedRayBatch> {
    let (b, nn) = (ts.rows(), ts.cols());
    if nn != n || deltas.shape() != ts.shape() {
        return Err(Error::Dim("composite_staged: ts/deltas shape".into()));
    }
    if t.value(sigma).rows() != b * n {
        return Err(Error::Dim(format!(
            "composite_staged: {} sample rows for {b} rays x {n}",
            t.value(sigma).rows()
        )));
    }
    let sigma_bn = t.reshape(sigma, vec![b, n])?;
    let sd = t.mul_const_t(sigma_bn, deltas)?;
    let neg = t.affine(sd, -1.0, 0.0)?;
    let e = t.exp(neg)?;
    let alpha = t.affine(e, -1.0, 1.0)?;
    let weights = t.render_weights(alpha)?;
    let acc = t.sum_axis1(weights)?; // (B)

    let w_flat = t.reshape(weights, vec![b * n])?;
    let colored = t.row_scale(rgb, w_flat)?;
    let fg = t.segment_sum(colored, n)?; // (B,3)
    let acc_col = t.reshape(acc, vec![b, 1])?;
    let resid = t.affine(acc_col, -1.0, 1.0)?;
    let resid_flat = t.reshape(resid, vec![b])?;
    let bg_term = t.row_scale(background, resid_flat)?;
    let color = t.add(fg, bg_term)?;

    let beta_bn = t.reshape(beta, vec![b, n])?;
    let wbeta = t.mul(weights, beta_bn)?;
    let beta_out = t.sum_axis1(wbeta)?;

    let wt = t.mul_const_t(weights, ts)?;
    let wt_sum = t.sum_axis1(wt)?;
    let acc_floor = t.max_const(acc, ACC_FLOOR)?;
    let depth = t.div(wt_sum, acc_floor)?;

    Ok(StagedRayBatch {
        color,
        depth,
        acc,
        beta: beta_out,
        weights,
    })
}
