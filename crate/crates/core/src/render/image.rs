//! Full-image rendering through any staged point-query model.

use super::composite::composite_staged;
use super::{midpoints, sample_ray, Ray, WorldMap};
use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::Result;
use crate::field::{positional_encode, StagedField, StagedPoint};
use crate::geom::Vec3;
use crate::img::{ImageBuf, ScalarMap, MISS};
use crate::scene::Camera;

/// Rays below this opacity are treated as missing the surface.
pub const HIT_ACC: f64 = 0.1;

/// Anything that can answer batched point queries on a tape.
///
/// Implementations re-stage per tape, so the renderer can chunk work across
/// fresh tapes without keeping gradients alive.
pub trait StagedQuery {
    fn levels_pos(&self) -> usize;
    fn levels_dir(&self) -> usize;
    fn embed_dim(&self) -> usize;
    /// Embedding table on the tape (for per-image rows).
    fn embed_table(&self) -> ValueId;
    fn query(
        &self,
        t: &mut Tape,
        enc_x: ValueId,
        enc_d: ValueId,
        sun: ValueId,
        emb: ValueId,
    ) -> Result<StagedPoint>;
    /// Per-ray sky color for background fill, from (B,3) sun directions.
    fn sky_color(&self, t: &mut Tape, sun: ValueId) -> Result<ValueId>;
}

impl StagedQuery for StagedField {
    fn levels_pos(&self) -> usize {
        self.arch.levels_pos
    }
    fn levels_dir(&self) -> usize {
        self.arch.levels_dir
    }
    fn embed_dim(&self) -> usize {
        self.arch.embed_dim
    }
    fn embed_table(&self) -> ValueId {
        self.embed
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
        let h = self.sky[0].apply(t, sun)?;
        let h = t.relu(h)?;
        let raw = self.sky[1].apply(t, h)?;
        t.sigmoid(raw)
    }
}

/// Where a batch's appearance embedding comes from.
#[derive(Clone, Debug)]
pub enum EmbedSource {
    /// Gather a trained table row (gradients flow into the table).
    TableRow(usize),
    /// Fixed vector, e.g. the mean embedding for held-out views.
    Fixed(Vec<f64>),
}

/// Stage embedding rows for `m` samples.
pub fn stage_embedding(
    t: &mut Tape,
    q: &dyn StagedQuery,
    src: &EmbedSource,
    m: usize,
) -> Result<ValueId> {
    match src {
        EmbedSource::TableRow(r) => t.gather_rows(q.embed_table(), &vec![*r; m]),
        EmbedSource::Fixed(v) => {
            let mut data = Vec::with_capacity(m * v.len());
            for _ in 0..m {
                data.extend_from_slice(v);
            }
            Ok(t.constant(Tensor::new(vec![m, v.len()], data)?))
        }
    }
}

/// Inputs for one batch of rays, ready for query + compositing.
pub struct RayBatchInputs {
    pub enc_x: Tensor,
    pub enc_d: Tensor,
    pub sun_samples: Tensor,
    pub sun_rays: Tensor,
    pub ts: Tensor,
    pub deltas: Tensor,
}

/// Encode sample positions/directions for `rays` with the given per-ray
/// jitter (`None` = deterministic midpoints). World depths stay in world
/// units; positions are mapped into the field cube.
pub fn build_ray_inputs(
    rays: &[Ray],
    world: &WorldMap,
    sun_dir: Vec3,
    n: usize,
    levels_pos: usize,
    levels_dir: usize,
    jitter: Option<&[Vec<f64>]>,
) -> RayBatchInputs {
    let b = rays.len();
    let mid = midpoints(n);
    let mut pts = Vec::with_capacity(b * n);
    let mut dirs = Vec::with_capacity(b * n);
    let mut ts_all = Vec::with_capacity(b * n);
    let mut ds_all = Vec::with_capacity(b * n);
    for (ri, ray) in rays.iter().enumerate() {
        let j = jitter.map_or(&mid[..], |js| &js[ri][..]);
        let (ts, ds) = sample_ray(ray, n, j);
        for i in 0..n {
            let p = ray.origin + ray.dir * ts[i];
            pts.push(world.to_field(p));
            dirs.push([ray.dir.x, ray.dir.y, ray.dir.z]);
        }
        ts_all.extend_from_slice(&ts);
        ds_all.extend_from_slice(&ds);
    }
    let sun = [sun_dir.x, sun_dir.y, sun_dir.z];
    let mut sun_s = Vec::with_capacity(b * n * 3);
    for _ in 0..b * n {
        sun_s.extend_from_slice(&sun);
    }
    let mut sun_r = Vec::with_capacity(b * 3);
    for _ in 0..b {
        sun_r.extend_from_slice(&sun);
    }
    RayBatchInputs {
        enc_x: positional_encode(&pts, levels_pos),
        enc_d: positional_encode(&dirs, levels_dir),
        sun_samples: Tensor::new(vec![b * n, 3], sun_s).expect("sun samples"),
        sun_rays: Tensor::new(vec![b, 3], sun_r).expect("sun rays"),
        ts: Tensor::new(vec![b, n], ts_all).expect("ts"),
        deltas: Tensor::new(vec![b, n], ds_all).expect("deltas"),
    }
}

/// A rendered view plus per-pixel diagnostics.
pub struct RenderedImage {
    pub rgb: ImageBuf,
    /// Expected depth; MISS sentinel where acc < HIT_ACC.
    pub depth: ScalarMap,
    /// Raw aggregated uncertainty per pixel.
    pub beta: ScalarMap,
    pub acc: ScalarMap,
}

impl RenderedImage {
    /// Mean aggregated uncertainty over all pixels.
    pub fn mean_beta(&self) -> f64 {
        self.beta.data.iter().sum::<f64>() / self.beta.data.len() as f64
    }
}

/// Render a full view deterministically (midpoint sampling, no gradients).
///
/// `stage` builds a fresh staged model per chunk; results are bit-identical
/// for any positive `chunk_rays` because every ray is processed with
/// ray-local arithmetic.
pub fn render_image<S: StagedQuery>(
    stage: &dyn Fn(&mut Tape) -> Result<S>,
    world: &WorldMap,
    scene_clip: &dyn Fn(Vec3, Vec3) -> Ray,
    camera: &Camera,
    sun_dir: Vec3,
    emb: &EmbedSource,
    n_samples: usize,
    chunk_rays: usize,
) -> Result<RenderedImage> {
    let (w, h) = (camera.width, camera.height);
    let mut rays = Vec::with_capacity(w * h);
    for py in 0..h {
        for px in 0..w {
            let d = camera.ray_dir(px, py);
            rays.push(scene_clip(camera.origin, d));
        }
    }
    let mut rgb = ImageBuf::new(w, h);
    let mut depth = ScalarMap::new(w, h);
    let mut beta = ScalarMap::new(w, h);
    let mut acc = ScalarMap::new(w, h);

    let chunk = chunk_rays.max(1);
    for (ci, chunk_rays) in rays.chunks(chunk).enumerate() {
        let mut tape = Tape::new();
        let q = stage(&mut tape)?;
        let inputs = build_ray_inputs(
            chunk_rays,
            world,
            sun_dir,
            n_samples,
            q.levels_pos(),
            q.levels_dir(),
            None,
        );
        let b = chunk_rays.len();
        let ex = tape.constant(inputs.enc_x);
        let ed = tape.constant(inputs.enc_d);
        let su = tape.constant(inputs.sun_samples);
        let sr = tape.constant(inputs.sun_rays);
        let emb_id = stage_embedding(&mut tape, &q, emb, b * n_samples)?;
        let point = q.query(&mut tape, ex, ed, su, emb_id)?;
        let bg = q.sky_color(&mut tape, sr)?;
        let out = composite_staged(
            &mut tape,
            point.sigma,
            point.rgb_eff,
            point.beta,
            &inputs.ts,
            &inputs.deltas,
            bg,
            n_samples,
        )?;
        for r in 0..b {
            let pix = ci * chunk + r;
            let (px, py) = (pix % w, pix / w);
            let c = [
                tape.value(out.color).at(r, 0),
                tape.value(out.color).at(r, 1),
                tape.value(out.color).at(r, 2),
            ];
            rgb.set_pixel(px, py, c);
            let a = tape.value(out.acc).data()[r];
            acc.set(px, py, a);
            beta.set(px, py, tape.value(out.beta).data()[r]);
            let d = tape.value(out.depth).data()[r];
            depth.set(px, py, if a >= HIT_ACC { d } else { MISS });
        }
    }
    Ok(RenderedImage {
        rgb,
        depth,
        beta,
        acc,
    })
}
