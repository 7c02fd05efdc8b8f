//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8  bytes  magic "NFCKPT1\n"
//! 4  bytes  JSON header length
//! n  bytes  JSON header: { kind, meta }
//! 4  bytes  tensor block count
//! per block:
//!   4 bytes name length, name bytes
//!   1 byte  rank, 4 bytes per dim
//!   8 bytes per element (f64)
//! ```
//!
//! `kind` names the artifact ("base", "controller", "student"); `meta`
//! carries whatever the owner needs to rebuild itself (architecture,
//! frozen-row counts, the hash of a linked base checkpoint).

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::field::{FieldArch, FieldParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"NFCKPT1\n";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
}

pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
        })
        .map_err(|e| Error::Config(format!("checkpoint header encode: {e}")))?;
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(t.shape().len() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Config(format!(
                    "truncated checkpoint {}",
                    path.display()
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let u32le = |pos: &mut usize| -> Result<usize> {
            let b = take(pos, 4)?;
            Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
        };
        if take(&mut pos, 8)? != MAGIC {
            return Err(Error::Config(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let hlen = u32le(&mut pos)?;
        let header: Header = serde_json::from_slice(take(&mut pos, hlen)?)
            .map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
        let n_tensors = u32le(&mut pos)?;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let nlen = u32le(&mut pos)?;
            let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
                .map_err(|_| Error::Config("checkpoint tensor name not utf-8".into()))?;
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32le(&mut pos)?);
            }
            let numel: usize = shape.iter().product();
            let raw = take(&mut pos, numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }
}

/// SHA-256 of a checkpoint file, hex-encoded. Frozen artifacts are pinned
/// by this digest.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h)?;
    Ok(crate::field::hex(&h.finalize()))
}

#[derive(Serialize, Deserialize)]
struct FieldMeta {
    arch: FieldArch,
    embed_frozen_rows: usize,
    /// Extra owner-defined fields (e.g. the linked base digest).
    #[serde(default)]
    extra: serde_json::Value,
}

impl FieldParams {
    pub fn save_checkpoint(
        &self,
        path: &Path,
        kind: &str,
        extra: serde_json::Value,
    ) -> Result<()> {
        let meta = serde_json::to_value(FieldMeta {
            arch: self.arch.clone(),
            embed_frozen_rows: self.embed_frozen_rows,
            extra,
        })
        .map_err(|e| Error::Config(format!("field meta encode: {e}")))?;
        Checkpoint {
            kind: kind.to_string(),
            meta,
            tensors: self.named_tensors(),
        }
        .save(path)
    }

    pub fn load_checkpoint(path: &Path, expect_kind: &str) -> Result<(Self, serde_json::Value)> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != expect_kind {
            return Err(Error::Config(format!(
                "{}: expected a {expect_kind} checkpoint, found {}",
                path.display(),
                ck.kind
            )));
        }
        let meta: FieldMeta = serde_json::from_value(ck.meta)
            .map_err(|e| Error::Config(format!("field meta decode: {e}")))?;
        let p = FieldParams::from_named(meta.arch, meta.embed_frozen_rows, &ck.tensors)?;
        Ok((p, meta.extra))
    }
}

#[derive(Serialize, Deserialize)]
struct ControllerMeta {
    ctrl_width: usize,
    embed_frozen_rows: usize,
    /// `params_hash` of the base the controller was trained against.
    base_hash: String,
}

impl crate::controller::CompositeField {
    /// Save the controller, the extended embedding table, and a digest
    /// pinning the exact base it belongs to.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        self.ctrl.visit(&mut |n, t| tensors.push((n.to_string(), t.clone())));
        tensors.push(("embed".to_string(), self.base.embed.clone()));
        let meta = serde_json::to_value(ControllerMeta {
            ctrl_width: self.ctrl.width,
            embed_frozen_rows: self.base.embed_frozen_rows,
            base_hash: self.frozen_hash(),
        })
        .map_err(|e| Error::Config(format!("controller meta encode: {e}")))?;
        Checkpoint {
            kind: "controller".into(),
            meta,
            tensors,
        }
        .save(path)
    }

    /// Reattach a saved controller to `base`. Fails if `base` is not the
    /// exact network the controller was trained against.
    pub fn load_checkpoint(path: &Path, mut base: FieldParams) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != "controller" {
            return Err(Error::Config(format!(
                "{}: expected a controller checkpoint, found {}",
                path.display(),
                ck.kind
            )));
        }
        let meta: ControllerMeta = serde_json::from_value(ck.meta)
            .map_err(|e| Error::Config(format!("controller meta decode: {e}")))?;
        if base.params_hash() != meta.base_hash {
            return Err(Error::Invariant(
                "controller checkpoint does not match this base network".into(),
            ));
        }
        let find = |name: &str| -> Result<Tensor> {
            ck.tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Config(format!("checkpoint missing tensor {name}")))
        };
        base.embed = find("embed")?;
        base.embed_frozen_rows = meta.embed_frozen_rows;
        let layer = |name: String| -> Result<crate::field::LinearLayer> {
            Ok(crate::field::LinearLayer {
                w: find(&format!("{name}.w"))?,
                b: find(&format!("{name}.b"))?,
            })
        };
        let head2 = |name: &str| -> Result<crate::field::Head> {
            Ok([layer(format!("ctrl.{name}.0"))?, layer(format!("ctrl.{name}.1"))?])
        };
        let depth = base.arch.trunk_depth;
        let ctrl = crate::controller::ControllerParams {
            width: meta.ctrl_width,
            stream: (0..depth)
                .map(|i| layer(format!("ctrl.stream.{i}")))
                .collect::<Result<_>>()?,
            inject: (0..depth)
                .map(|i| layer(format!("ctrl.inject.{i}")))
                .collect::<Result<_>>()?,
            rgb_res: head2("rgb")?,
            sunvis_res: head2("sunvis")?,
            sky_res: head2("sky")?,
        };
        Ok(crate::controller::CompositeField { base, ctrl })
    }
}
