//! Tape staging for the base + controller composite.

use super::CompositeField;
use crate::autodiff::{Grads, Tape, Tensor, ValueId};
use crate::error::Result;
use crate::field::{
    compose_appearance_staged, StagedField, StagedLinear, StagedPoint, BETA_MIN,
};
use crate::render::StagedQuery;
use std::collections::BTreeMap;

pub struct StagedComposite {
    pub base: StagedField,
    pub stream: Vec<StagedLinear>,
    pub inject: Vec<StagedLinear>,
    pub rgb_res: [StagedLinear; 2],
    pub sunvis_res: [StagedLinear; 2],
    pub sky_res: [StagedLinear; 2],
    names: Vec<(String, ValueId)>,
}

impl CompositeField {
    /// Stage the frozen base as constants and the controller (plus the
    /// extended embedding table) as leaves when `trainable`.
    pub fn stage(&self, tape: &mut Tape, trainable: bool) -> StagedComposite {
        let mut base = self.base.stage(tape, false);
        let mut names = Vec::new();
        if trainable {
            // Replace the constant embedding with a trainable leaf; the
            // optimizer's frozen-row count protects pre-existing rows.
            let emb = tape.leaf(self.base.embed.clone());
            base.embed = emb;
            names.push(("embed".to_string(), emb));
        }
        let mut put = |tape: &mut Tape, name: String, t: &Tensor| -> ValueId {
            let id = if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            };
            names.push((name, id));
            id
        };
        let mut layer = |tape: &mut Tape, name: String, l: &crate::field::LinearLayer| StagedLinear {
            w: put(tape, format!("{name}.w"), &l.w),
            b: put(tape, format!("{name}.b"), &l.b),
        };
        let stream = self
            .ctrl
            .stream
            .iter()
            .enumerate()
            .map(|(i, l)| layer(tape, format!("ctrl.stream.{i}"), l))
            .collect();
        let inject = self
            .ctrl
            .inject
            .iter()
            .enumerate()
            .map(|(i, l)| layer(tape, format!("ctrl.inject.{i}"), l))
            .collect();
        let mut head = |tape: &mut Tape, name: &str, h: &crate::field::Head| {
            [
                layer(tape, format!("ctrl.{name}.0"), &h[0]),
                layer(tape, format!("ctrl.{name}.1"), &h[1]),
            ]
        };
        let rgb_res = head(tape, "rgb", &self.ctrl.rgb_res);
        let sunvis_res = head(tape, "sunvis", &self.ctrl.sunvis_res);
        let sky_res = head(tape, "sky", &self.ctrl.sky_res);
        StagedComposite {
            base,
            stream,
            inject,
            rgb_res,
            sunvis_res,
            sky_res,
            names,
        }
    }
}

fn res2(t: &mut Tape, head: &[StagedLinear; 2], input: ValueId) -> Result<ValueId> {
    let h = head[0].apply(t, input)?;
    let h = t.relu(h)?;
    head[1].apply(t, h)
}

impl StagedComposite {
    /// Corrected trunk pass. Returns the corrected feature and the final
    /// controller stream feature.
    pub fn trunk_forward(&self, t: &mut Tape, enc_x: ValueId) -> Result<(ValueId, ValueId)> {
        let mut z = enc_x;
        let mut zc = enc_x;
        for (i, layer) in self.base.trunk.iter().enumerate() {
            // Injection reads the stream state feeding this depth.
            let dz = self.inject[i].apply(t, zc)?;
            let zc_next = {
                let s = self.stream[i].apply(t, zc)?;
                t.relu(s)?
            };
            let inp = if self.base.arch.skip_layer == Some(i) && i > 0 {
                t.concat(&[z, enc_x])?
            } else {
                z
            };
            let pre = layer.apply(t, inp)?;
            let pre = t.add(pre, dz)?;
            z = t.relu(pre)?;
            zc = zc_next;
        }
        Ok((z, zc))
    }

    pub fn point_forward(
        &self,
        t: &mut Tape,
        enc_x: ValueId,
        enc_d: ValueId,
        sun: ValueId,
        emb: ValueId,
    ) -> Result<StagedPoint> {
        let (z, zc) = self.trunk_forward(t, enc_x)?;
        let sigma = {
            let raw = self.base.head2(t, &self.base.sigma, z)?;
            t.softplus(raw)?
        };
        let rgb_raw = {
            let inp = t.concat(&[z, enc_d])?;
            let pre = self.base.head2(t, &self.base.rgb, inp)?;
            let rinp = t.concat(&[zc, enc_d])?;
            let res = res2(t, &self.rgb_res, rinp)?;
            let sum = t.add(pre, res)?;
            t.sigmoid(sum)?
        };
        let beta = {
            let inp = t.concat(&[z, emb])?;
            let raw = self.base.head2(t, &self.base.beta, inp)?;
            let sp = t.softplus(raw)?;
            t.affine(sp, 1.0, BETA_MIN)?
        };
        let sun_vis = {
            let inp = t.concat(&[z, sun])?;
            let pre = self.base.head2(t, &self.base.sunvis, inp)?;
            let rinp = t.concat(&[zc, sun])?;
            let res = res2(t, &self.sunvis_res, rinp)?;
            let sum = t.add(pre, res)?;
            t.sigmoid(sum)?
        };
        let sky = {
            let pre = self.base.head2(t, &self.base.sky, sun)?;
            let res = res2(t, &self.sky_res, sun)?;
            let sum = t.add(pre, res)?;
            t.sigmoid(sum)?
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

    /// Trainable leaf ids with their optimizer names (staging order).
    pub fn named_ids(&self) -> &[(String, ValueId)] {
        &self.names
    }

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

impl StagedQuery for StagedComposite {
    fn levels_pos(&self) -> usize {
        self.base.arch.levels_pos
    }
    fn levels_dir(&self) -> usize {
        self.base.arch.levels_dir
    }
    fn embed_dim(&self) -> usize {
        self.base.arch.embed_dim
    }
    fn embed_table(&self) -> ValueId {
        self.base.embed
    }
    fn query(
        &self,
        t: &mut Tape,
        enc_x: ValueId,
        enc_d: ValueId,
        sun: ValueId,
        emb: ValueId,
    ) -> Result<StagedPoint> {
        self.point_forward(t, enc_x, enc_d, sun, emb)
    }
    fn sky_color(&self, t: &mut Tape, sun: ValueId) -> Result<ValueId> {
        let pre = self.base.head2(t, &self.base.sky, sun)?;
        let res = res2(t, &self.sky_res, sun)?;
        let sum = t.add(pre, res)?;
        t.sigmoid(sum)
    }
}
