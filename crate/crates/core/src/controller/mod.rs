//! Residual controller: a trainable side network that corrects a frozen
//! base field.
//!
//! Each base trunk layer `i` gets an additive pre-activation injection
//! `dz_i` produced by the controller's own feature stream. The stream
//! layers are randomly initialized; every injection layer (and every
//! residual head output layer) starts at exactly zero, so a freshly
//! attached controller reproduces the base field bit for bit.
//!
//! Density and uncertainty have no dedicated residual head: they follow the
//! corrected trunk feature through the frozen base heads. Color, sun
//! visibility, and sky color additionally receive head-level residuals.

mod staged;

pub use staged::StagedComposite;

use crate::autodiff::{ParamsMut, Tensor};
use crate::error::{Error, Result};
use crate::field::{FieldArch, FieldParams, Head, LinearLayer};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct ControllerParams {
    /// Stream feature width.
    pub width: usize,
    /// Randomly initialized stream layers (depth of the base trunk).
    pub stream: Vec<LinearLayer>,
    /// Zero-initialized per-layer injections into the base trunk.
    pub inject: Vec<LinearLayer>,
    /// Residual head paths: random hidden layer, zero output layer.
    pub rgb_res: Head,
    pub sunvis_res: Head,
    pub sky_res: Head,
}

fn res_head(rng: &mut impl Rng, inp: usize, hidden: usize, out: usize) -> Head {
    [
        LinearLayer::init(rng, hidden, inp),
        LinearLayer::zero(out, hidden),
    ]
}

impl ControllerParams {
    pub fn new(base: &FieldArch, width: usize, rng: &mut impl Rng) -> Self {
        let enc = base.enc_pos_dim();
        let stream = (0..base.trunk_depth)
            .map(|i| LinearLayer::init(rng, width, if i == 0 { enc } else { width }))
            .collect();
        let inject = (0..base.trunk_depth)
            .map(|i| LinearLayer::zero(base.trunk_width, if i == 0 { enc } else { width }))
            .collect();
        let h = base.head_hidden;
        ControllerParams {
            rgb_res: res_head(rng, width + base.enc_dir_dim(), h, 3),
            sunvis_res: res_head(rng, width + 3, h, 1),
            sky_res: res_head(rng, 3, h, 3),
            stream,
            inject,
            width,
        }
    }

    /// True iff every injection and residual output layer is exactly zero
    /// (the state in which the composite equals the base).
    pub fn is_identity(&self) -> bool {
        let zero = |l: &LinearLayer| {
            l.w.data().iter().all(|&v| v == 0.0) && l.b.data().iter().all(|&v| v == 0.0)
        };
        self.inject.iter().all(zero)
            && zero(&self.rgb_res[1])
            && zero(&self.sunvis_res[1])
            && zero(&self.sky_res[1])
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.stream.iter().enumerate() {
            f(&format!("ctrl.stream.{i}.w"), &l.w);
            f(&format!("ctrl.stream.{i}.b"), &l.b);
        }
        for (i, l) in self.inject.iter().enumerate() {
            f(&format!("ctrl.inject.{i}.w"), &l.w);
            f(&format!("ctrl.inject.{i}.b"), &l.b);
        }
        for (name, head) in [
            ("rgb", &self.rgb_res),
            ("sunvis", &self.sunvis_res),
            ("sky", &self.sky_res),
        ] {
            for (j, l) in head.iter().enumerate() {
                f(&format!("ctrl.{name}.{j}.w"), &l.w);
                f(&format!("ctrl.{name}.{j}.b"), &l.b);
            }
        }
    }

    fn for_each_layer_mut(
        &mut self,
        f: &mut dyn FnMut(&str, &mut Tensor, usize) -> Result<()>,
    ) -> Result<()> {
        for (i, l) in self.stream.iter_mut().enumerate() {
            f(&format!("ctrl.stream.{i}.w"), &mut l.w, 0)?;
            f(&format!("ctrl.stream.{i}.b"), &mut l.b, 0)?;
        }
        for (i, l) in self.inject.iter_mut().enumerate() {
            f(&format!("ctrl.inject.{i}.w"), &mut l.w, 0)?;
            f(&format!("ctrl.inject.{i}.b"), &mut l.b, 0)?;
        }
        for (name, head) in [
            ("rgb", &mut self.rgb_res),
            ("sunvis", &mut self.sunvis_res),
            ("sky", &mut self.sky_res),
        ] {
            for (j, l) in head.iter_mut().enumerate() {
                f(&format!("ctrl.{name}.{j}.w"), &mut l.w, 0)?;
                f(&format!("ctrl.{name}.{j}.b"), &mut l.b, 0)?;
            }
        }
        Ok(())
    }
}

/// Frozen base plus trainable controller.
///
/// The base's embedding table is the one exception to base immutability:
/// it grows rows for newly arrived images, with every pre-existing row
/// frozen. Everything else in `base` is staged as constants and never
/// reached by the optimizer.
#[derive(Clone, Debug)]
pub struct CompositeField {
    pub base: FieldParams,
    pub ctrl: ControllerParams,
}

impl CompositeField {
    /// Attach a fresh (identity) controller and allocate embedding rows for
    /// `n_new_images`.
    pub fn new(
        mut base: FieldParams,
        ctrl_width: usize,
        n_new_images: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if ctrl_width == 0 {
            return Err(Error::Config("controller width must be positive".into()));
        }
        let ctrl = ControllerParams::new(&base.arch, ctrl_width, rng);
        if n_new_images > 0 {
            base.extend_embeddings(n_new_images, rng);
        }
        Ok(CompositeField { base, ctrl })
    }

    /// Hash over the non-trainable base parameters (everything but the
    /// embedding extension): must never change while the controller trains.
    pub fn frozen_hash(&self) -> String {
        let mut frozen = self.base.clone();
        // Truncate the table to its frozen prefix so trainable rows are
        // excluded from the digest.
        let rows = frozen.embed_frozen_rows.max(1).min(frozen.embed.rows());
        let cols = frozen.embed.cols();
        frozen.embed = Tensor::new(
            vec![rows, cols],
            frozen.embed.data()[..rows * cols].to_vec(),
        )
        .expect("embed prefix");
        frozen.params_hash()
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.base.param_count();
        self.ctrl.visit(&mut |_, t| n += t.numel());
        n
    }
}

impl ParamsMut for CompositeField {
    fn for_each_mut(
        &mut self,
        f: &mut dyn FnMut(&str, &mut Tensor, usize) -> Result<()>,
    ) -> Result<()> {
        self.ctrl.for_each_layer_mut(f)?;
        f("embed", &mut self.base.embed, self.base.embed_frozen_rows)
    }
}
