//! Neural terrain field: an MLP trunk with heads for density, view-dependent
//! color, per-image uncertainty, sun visibility, and sky color, plus a
//! per-image appearance embedding table.
//!
//! Parameters live here as plain tensors; [`staged`] lifts them onto a
//! [`Tape`](crate::autodiff::Tape) for differentiable forward passes.

mod encode;
mod staged;

pub use encode::{encoded_dim, positional_encode};
pub use staged::{compose_appearance_staged, StagedField, StagedLinear, StagedPoint};

use crate::autodiff::{ParamsMut, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Lower bound of the uncertainty head output.
pub const BETA_MIN: f64 = 0.05;

/// Bias on the final uncertainty layer so a fresh network starts near the
/// floor (softplus(-6) ~ 0.0025).
const BETA_BIAS_INIT: f64 = -6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldArch {
    pub trunk_width: usize,
    pub trunk_depth: usize,
    /// Trunk layer whose input gets the encoded position re-concatenated.
    pub skip_layer: Option<usize>,
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub levels_pos: usize,
    pub levels_dir: usize,
}

impl FieldArch {
    /// Full-size field: 8-layer trunk with a mid-trunk skip connection.
    pub fn base(trunk_width: usize) -> Self {
        FieldArch {
            trunk_width,
            trunk_depth: 8,
            skip_layer: Some(4),
            head_hidden: (trunk_width / 2).max(8),
            embed_dim: 8,
            levels_pos: 6,
            levels_dir: 2,
        }
    }

    /// Compact student for distillation.
    pub fn student(trunk_width: usize) -> Self {
        FieldArch {
            trunk_width,
            trunk_depth: 4,
            skip_layer: None,
            head_hidden: (trunk_width / 2).max(6),
            embed_dim: 4,
            levels_pos: 6,
            levels_dir: 2,
        }
    }

    pub fn enc_pos_dim(&self) -> usize {
        encoded_dim(self.levels_pos)
    }

    pub fn enc_dir_dim(&self) -> usize {
        encoded_dim(self.levels_dir)
    }

    /// Input width of trunk layer `i`.
    pub fn trunk_in(&self, i: usize) -> usize {
        if i == 0 {
            self.enc_pos_dim()
        } else if self.skip_layer == Some(i) {
            self.trunk_width + self.enc_pos_dim()
        } else {
            self.trunk_width
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearLayer {
    /// He-style init: weights ~ N(0, 2/fan_in), zero bias.
    pub fn init(rng: &mut impl Rng, out: usize, inp: usize) -> Self {
        let scale = (2.0 / inp as f64).sqrt();
        LinearLayer {
            w: Tensor::randn(&[out, inp], scale, rng),
            b: Tensor::zeros(&[out]),
        }
    }

    pub fn zero(out: usize, inp: usize) -> Self {
        LinearLayer {
            w: Tensor::zeros(&[out, inp]),
            b: Tensor::zeros(&[out]),
        }
    }
}

/// Two-layer head: relu hidden, activation applied by the forward pass.
pub type Head = [LinearLayer; 2];

#[derive(Clone, Debug)]
pub struct FieldParams {
    pub arch: FieldArch,
    pub trunk: Vec<LinearLayer>,
    pub sigma: Head,
    pub rgb: Head,
    pub beta: Head,
    pub sunvis: Head,
    pub sky: Head,
    /// One appearance row per training image index.
    pub embed: Tensor,
    /// Leading embedding rows excluded from optimizer updates.
    pub embed_frozen_rows: usize,
}

fn head(rng: &mut impl Rng, inp: usize, hidden: usize, out: usize) -> Head {
    [
        LinearLayer::init(rng, hidden, inp),
        LinearLayer::init(rng, out, hidden),
    ]
}

impl FieldParams {
    pub fn new(arch: FieldArch, n_images: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_images == 0 {
            return Err(Error::Config("field needs at least one image row".into()));
        }
        let w = arch.trunk_width;
        let h = arch.head_hidden;
        let trunk = (0..arch.trunk_depth)
            .map(|i| LinearLayer::init(rng, w, arch.trunk_in(i)))
            .collect();
        // Zero final layer + negative bias: a fresh field reports the floor
        // uncertainty everywhere (softplus gradient keeps the layer live).
        let mut beta = [
            LinearLayer::init(rng, h, w + arch.embed_dim),
            LinearLayer::zero(1, h),
        ];
        beta[1].b.data_mut()[0] = BETA_BIAS_INIT;
        let embed = Tensor::randn(&[n_images, arch.embed_dim], 0.01, rng);
        Ok(FieldParams {
            sigma: head(rng, w, h, 1),
            rgb: head(rng, w + arch.enc_dir_dim(), h, 3),
            beta,
            sunvis: head(rng, w + 3, h, 1),
            sky: head(rng, 3, h, 3),
            trunk,
            embed,
            embed_frozen_rows: 0,
            arch,
        })
    }

    /// Grow the embedding table by `n_new` rows for newly arrived images and
    /// freeze every pre-existing row.
    pub fn extend_embeddings(&mut self, n_new: usize, rng: &mut impl Rng) {
        let old = self.embed.rows();
        let dim = self.arch.embed_dim;
        let fresh = Tensor::randn(&[n_new, dim], 0.01, rng);
        let mut data = self.embed.data().to_vec();
        data.extend_from_slice(fresh.data());
        self.embed = Tensor::new(vec![old + n_new, dim], data).expect("embed grow");
        self.embed_frozen_rows = old;
    }

    /// Mean of the trained embedding rows; used when rendering images that
    /// have no row of their own (held-out views).
    pub fn mean_embedding(&self) -> Vec<f64> {
        self.mean_embedding_rows(self.embed.rows())
    }

    /// Mean over the first `rows` embedding rows (clamped to the table).
    /// Lets evaluation stick to the initial-era appearance codes after the
    /// table has been extended with rows for later images.
    pub fn mean_embedding_rows(&self, rows: usize) -> Vec<f64> {
        let (rows, dim) = (rows.clamp(1, self.embed.rows()), self.embed.cols());
        let mut m = vec![0.0; dim];
        for r in 0..rows {
            for c in 0..dim {
                m[c] += self.embed.at(r, c);
            }
        }
        for v in &mut m {
            *v /= rows as f64;
        }
        m
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Hash of every parameter tensor (names, shapes, exact f64 bytes).
    /// Used to prove the frozen base never moves.
    pub fn params_hash(&self) -> String {
        let mut h = Sha256::new();
        self.visit(&mut |name, t| {
            h.update(name.as_bytes());
            h.update((t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        });
        hex(&h.finalize())
    }

    /// Ordered walk over `(name, tensor)`; the order defines the checkpoint
    /// layout and must match `for_each_mut`.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.trunk.iter().enumerate() {
            f(&format!("trunk.{i}.w"), &l.w);
            f(&format!("trunk.{i}.b"), &l.b);
        }
        for (name, head) in [
            ("sigma", &self.sigma),
            ("rgb", &self.rgb),
            ("beta", &self.beta),
            ("sunvis", &self.sunvis),
            ("sky", &self.sky),
        ] {
            for (j, l) in head.iter().enumerate() {
                f(&format!("{name}.{j}.w"), &l.w);
                f(&format!("{name}.{j}.b"), &l.b);
            }
        }
        f("embed", &self.embed);
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    /// Rebuild parameters from named tensors (checkpoint load path).
    pub fn from_named(
        arch: FieldArch,
        embed_frozen_rows: usize,
        tensors: &[(String, Tensor)],
    ) -> Result<Self> {
        let find = |name: &str| -> Result<Tensor> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Config(format!("checkpoint missing tensor {name}")))
        };
        let layer = |name: String| -> Result<LinearLayer> {
            Ok(LinearLayer {
                w: find(&format!("{name}.w"))?,
                b: find(&format!("{name}.b"))?,
            })
        };
        let head2 = |name: &str| -> Result<Head> {
            Ok([layer(format!("{name}.0"))?, layer(format!("{name}.1"))?])
        };
        let trunk = (0..arch.trunk_depth)
            .map(|i| layer(format!("trunk.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let p = FieldParams {
            sigma: head2("sigma")?,
            rgb: head2("rgb")?,
            beta: head2("beta")?,
            sunvis: head2("sunvis")?,
            sky: head2("sky")?,
            embed: find("embed")?,
            embed_frozen_rows,
            trunk,
            arch,
        };
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let a = &self.arch;
        if self.trunk.len() != a.trunk_depth {
            return Err(Error::Config("trunk depth mismatch".into()));
        }
        for (i, l) in self.trunk.iter().enumerate() {
            if l.w.shape() != [a.trunk_width, a.trunk_in(i)] {
                return Err(Error::Config(format!("trunk.{i}.w shape mismatch")));
            }
        }
        if self.embed.cols() != a.embed_dim || self.embed_frozen_rows > self.embed.rows() {
            return Err(Error::Config("embedding table shape mismatch".into()));
        }
        Ok(())
    }
}

impl ParamsMut for FieldParams {
    fn for_each_mut(
        &mut self,
        f: &mut dyn FnMut(&str, &mut Tensor, usize) -> Result<()>,
    ) -> Result<()> {
        for (i, l) in self.trunk.iter_mut().enumerate() {
            f(&format!("trunk.{i}.w"), &mut l.w, 0)?;
            f(&format!("trunk.{i}.b"), &mut l.b, 0)?;
        }
        for (name, head) in [
            ("sigma", &mut self.sigma),
            ("rgb", &mut self.rgb),
            ("beta", &mut self.beta),
            ("sunvis", &mut self.sunvis),
            ("sky", &mut self.sky),
        ] {
            for (j, l) in head.iter_mut().enumerate() {
                f(&format!("{name}.{j}.w"), &mut l.w, 0)?;
                f(&format!("{name}.{j}.b"), &mut l.b, 0)?;
            }
        }
        f("embed", &mut self.embed, self.embed_frozen_rows)
    }
}

/// Effective surface color: the base albedo/color modulated by sun
/// visibility, with occluded light replaced by sky color.
pub fn compose_appearance(rgb: [f64; 3], sun_vis: f64, sky: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (rgb[i] * (sun_vis + (1.0 - sun_vis) * sky[i])).clamp(0.0, 1.0);
    }
    out
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
