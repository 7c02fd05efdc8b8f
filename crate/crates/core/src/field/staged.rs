//! Tape-staged forward passes for the field.
//!
//! [`FieldParams::stage`] copies every parameter tensor onto a tape (as
//! trainable leaves or constants); the returned [`StagedField`] then runs
//! batched point queries whose gradients come back keyed by the same names
//! the optimizer uses.

use super::{FieldArch, FieldParams};
use crate::autodiff::{Grads, Tape, Tensor, ValueId};
use crate::error::Result;
use std::collections::BTreeMap;

#[derive(Clone, Copy)]
pub struct StagedLinear {
    pub w: ValueId,
    pub b: ValueId,
}

impl StagedLinear {
    pub fn apply(&self, t: &mut Tape, x: ValueId) -> Result<ValueId> {
        t.linear(x, self.w, self.b)
    }
}

/// Outputs of one batched point query, all (M, ·) tensors on the tape.
pub struct StagedPoint {
    /// Volume density, softplus-positive, (M,1).
    pub sigma: ValueId,
    /// Effective color after appearance composition, (M,3), in [0,1].
    pub rgb_eff: ValueId,
    /// Raw view-dependent color before sun/sky modulation, (M,3).
    pub rgb_raw: ValueId,
    /// Per-point uncertainty, >= BETA_MIN, (M,1).
    pub beta: ValueId,
    pub sun_vis: ValueId,
    pub sky: ValueId,
    /// Final trunk feature, (M,W); residual paths tap this.
    pub z: ValueId,
}

pub struct StagedField {
    pub arch: FieldArch,
    pub trunk: Vec<StagedLinear>,
    pub sigma: [StagedLinear; 2],
    pub rgb: [StagedLinear; 2],
    pub beta: [StagedLinear; 2],
    pub sunvis: [StagedLinear; 2],
    pub sky: [StagedLinear; 2],
    pub embed: ValueId,
    names: Vec<(String, ValueId)>,
}

impl FieldParams {
    /// Copy all parameters onto `tape`. With `trainable = false` the copies
    /// are constants: no gradient work, and `grads_by_name` returns nothing.
    pub fn stage(&self, tape: &mut Tape, trainable: bool) -> StagedField {
        let mut names = Vec::new();
        let mut put = |tape: &mut Tape, name: String, t: &Tensor| -> ValueId {
            let id = if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            };
            names.push((name, id));
            id
        };
        let mut layer = |tape: &mut Tape, name: &str, l: &super::LinearLayer| StagedLinear {
            w: put(tape, format!("{name}.w"), &l.w),
            b: put(tape, format!("{name}.b"), &l.b),
        };
        let trunk = self
            .trunk
            .iter()
            .enumerate()
            .map(|(i, l)| layer(tape, &format!("trunk.{i}"), l))
            .collect();
        let head = |tape: &mut Tape, layer: &mut dyn FnMut(&mut Tape, &str, &super::LinearLayer) -> StagedLinear,
                    name: &str,
                    h: &super::Head| {
            [
                layer(tape, &format!("{name}.0"), &h[0]),
                layer(tape, &format!("{name}.1"), &h[1]),
            ]
        };
        let sigma = head(tape, &mut layer, "sigma", &self.sigma);
        let rgb = head(tape, &mut layer, "rgb", &self.rgb);
        let beta = head(tape, &mut layer, "beta", &self.beta);
        let sunvis = head(tape, &mut layer, "sunvis", &self.sunvis);
        let sky = head(tape, &mut layer, "sky", &self.sky);
        let embed = put(tape, "embed".into(), &self.embed);
        StagedField {
            arch: self.arch.clone(),
            trunk,
            sigma,
            rgb,
            beta,
            sunvis,
            sky,
            embed,
            names,
        }
    }
}

impl StagedField {
    /// Trunk pass with relu activations and the mid-trunk skip concat.
    pub fn trunk_forward(&self, t: &mut Tape, enc_x: ValueId) -> Result<ValueId> {
        let mut z = enc_x;
        for (i, layer) in self.trunk.iter().enumerate() {
            let inp = if self.arch.skip_layer == Some(i) && i > 0 {
                t.concat(&[z, enc_x])?
            } else {
                z
            };
            z = layer.apply(t, inp)?;
            z = t.relu(z)?;
        }
        Ok(z)
    }

    /// Two-layer head up to (but excluding) its output activation.
    pub(crate) fn head2(
        &self,
        t: &mut Tape,
        head: &[StagedLinear; 2],
        input: ValueId,
    ) -> Result<ValueId> {
        let h = head[0].apply(t, input)?;
        let h = t.relu(h)?;
        head[1].apply(t, h)
    }

    /// Embedding rows for a batch of per-sample image indices, (M, D).
    pub fn embed_rows(&self, t: &mut Tape, idx: &[usize]) -> Result<ValueId> {
        t.gather_rows(self.embed, idx)
    }

    /// All heads from a trunk feature `z` (M,W).
    ///
    /// `enc_d` is the encoded view direction (M, enc_dir_dim), `sun` the sun
    /// direction (M,3), and `emb` the per-sample embedding rows (M, D) —
    /// from [`embed_rows`](Self::embed_rows) or a constant fallback.
    pub fn heads_forward(
        &self,
        t: &mut Tape,
        z: ValueId,
        enc_d: ValueId,
        sun: ValueId,
        emb: ValueId,
    ) -> Result<StagedPoint> {
        let sigma = {
            let raw = self.head2(t, &self.sigma, z)?;
            t.softplus(raw)?
        };
        let rgb_raw = {
            let inp = t.concat(&[z, enc_d])?;
            let raw = self.head2(t, &self.rgb, inp)?;
            t.sigmoid(raw)?
        };
        let beta = {
            let inp = t.concat(&[z, emb])?;
            let raw = self.head2(t, &self.beta, inp)?;
            let sp = t.softplus(raw)?;
            t.affine(sp, 1.0, super::BETA_MIN)?
        };
        let sun_vis = {
            let inp = t.concat(&[z, sun])?;
            let raw = self.head2(t, &self.sunvis, inp)?;
            t.sigmoid(raw)?
        };
        let sky = {
            let raw = self.head2(t, &self.sky, sun)?;
            t.sigmoid(raw)?
        };
        let rgb_eff = compose_appearance_staged(t, rgb_raw, sun_vis, sky)?;
        Ok(StagedPoint {
            sigma,
            rgb_eff,
            rgb_raw,
            beta,
            sun_vis,
            sky,
            z,
        })
    }

    /// Full point query: encoded positions/directions in, all heads out.
    pub fn point_forward(
        &self,
        t: &mut Tape,
        enc_x: ValueId,
        enc_d: ValueId,
        sun: ValueId,
        emb: ValueId,
    ) -> Result<StagedPoint> {
        let z = self.trunk_forward(t, enc_x)?;
        self.heads_forward(t, z, enc_d, sun, emb)
    }

    /// Trainable leaf ids with their optimizer names (staging order).
    pub fn named_ids(&self) -> &[(String, ValueId)] {
        &self.names
    }

    /// Collect this field's gradients from a backward pass, keyed by the
    /// names `adam_step` expects. Parameters without gradients are skipped.
    pub fn grads_by_name(&self, grads: &Grads) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, id) in &self.names {
            if let Some(g) = grads.get(*id) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}

/// Staged appearance composition: `c_eff = clamp(c * (v + (1-v)*sky))`
/// with sun visibility `v` (M,1), colors (M,3).
pub fn compose_appearance_staged(
    t: &mut Tape,
    rgb: ValueId,
    sun_vis: ValueId,
    sky: ValueId,
) -> Result<ValueId> {
    let one_minus = t.affine(sun_vis, -1.0, 1.0)?; // (M,1)
    let m = t.value(one_minus).rows();
    let omr = t.reshape(one_minus, vec![m])?;
    let sky_term = t.row_scale(sky, omr)?; // (1-v) * sky
    let v3 = t.repeat_cols(sun_vis, 3)?;
    let light = t.add(v3, sky_term)?;
    let c = t.mul(rgb, light)?;
    let c = t.max_const(c, 0.0)?;
    t.min_const(c, 1.0)
}
