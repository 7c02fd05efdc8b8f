//! Diagonal Fisher-information estimate for the consolidation baseline.

use super::{build_batch, TrainConfig, STREAM_FISHER};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::render::{composite_staged, StagedQuery, WorldMap};
use crate::scene::{SceneModel, ViewRecord};
use std::collections::BTreeMap;

/// Estimate the diagonal Fisher information of `field` on `views`: the mean
/// over single-ray batches of the squared photometric-loss gradient per
/// parameter. Entries are keyed by optimizer parameter name.
pub fn estimate_fisher(
    scene: &SceneModel,
    field: &FieldParams,
    views: &[ViewRecord],
    cfg: &TrainConfig,
) -> Result<BTreeMap<String, Tensor>> {
    if views.is_empty() {
        return Err(Error::Contract("fisher: no views".into()));
    }
    if cfg.fisher_rays == 0 {
        return Err(Error::Config("fisher_rays must be positive".into()));
    }
    if views.len() > field.embed.rows() {
        return Err(Error::Contract(format!(
            "fisher: {} views but only {} embedding rows",
            views.len(),
            field.embed.rows()
        )));
    }
    let world = WorldMap::for_scene(scene);
    let refs: Vec<&ViewRecord> = views.iter().collect();
    let rows: Vec<usize> = (0..refs.len()).collect();
    let mut rng = cfg.rng(STREAM_FISHER);
    let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();

    for _ in 0..cfg.fisher_rays {
        // One ray per pass so the squared gradient is per-observation, not
        // averaged away inside a batch.
        let batch = build_batch(
            scene, &world, &refs, &rows, &field.arch, 1, cfg.n_samples, &mut rng,
        );
        let mut tape = Tape::new();
        let staged = field.stage(&mut tape, true);
        let ex = tape.constant(batch.enc_x);
        let ed = tape.constant(batch.enc_d);
        let su = tape.constant(batch.sun_samples);
        let sr = tape.constant(batch.sun_rays);
        let emb = tape.gather_rows(staged.embed_table(), &batch.emb_idx)?;
        let point = staged.query(&mut tape, ex, ed, su, emb)?;
        let bg = staged.sky_color(&mut tape, sr)?;
        let out = composite_staged(
            &mut tape, point.sigma, point.rgb_eff, point.beta,
            &batch.ts, &batch.deltas, bg, cfg.n_samples,
        )?;
        let loss = super::rgb_mse(&mut tape, out.color, &batch.gt)?;
        let grads = tape.backward(loss)?;
        for (name, g) in staged.grads_by_name(&grads) {
            let e = acc.entry(name).or_insert_with(|| {
                Tensor::new(g.shape().to_vec(), vec![0.0; g.numel()]).expect("fisher acc")
            });
            let data = e.data_mut();
            for (d, v) in data.iter_mut().zip(g.data()) {
                *d += v * v;
            }
        }
    }

    let k = cfg.fisher_rays as f64;
    for t in acc.values_mut() {
        for v in t.data_mut() {
            *v /= k;
        }
    }
    // Parameters that never received a gradient (e.g. untouched embedding
    // rows) still need an entry so the penalty can pair every leaf.
    for (name, t) in field.named_tensors() {
        acc.entry(name).or_insert_with(|| {
            Tensor::new(t.shape().to_vec(), vec![0.0; t.numel()]).expect("fisher zero")
        });
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldArch;
    use crate::scene::{gen_terrain, make_dataset, DatasetConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fisher_is_nonnegative_complete_and_deterministic() {
        let scene = gen_terrain(11, 32, 6.0).unwrap();
        let ds = make_dataset(
            &scene, 2, 1, 1, 5,
            &DatasetConfig { image_size: 8, ..DatasetConfig::default() },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let field = FieldParams::new(FieldArch::base(12), 2, &mut rng).unwrap();
        let cfg = TrainConfig { fisher_rays: 6, n_samples: 4, ..TrainConfig::default() };
        let f1 = estimate_fisher(&scene, &field, &ds.initial, &cfg).unwrap();
        let f2 = estimate_fisher(&scene, &field, &ds.initial, &cfg).unwrap();
        // Covers every parameter, all entries finite and >= 0, runs repeat.
        for (name, t) in field.named_tensors() {
            let f = f1.get(&name).expect("missing fisher entry");
            assert_eq!(f.shape(), t.shape(), "{name}");
            assert!(f.data().iter().all(|v| v.is_finite() && *v >= 0.0), "{name}");
            assert_eq!(f.data(), f2.get(&name).unwrap().data(), "{name}");
        }
        // The trunk actually carries signal somewhere.
        let any_positive = f1
            .iter()
            .any(|(n, t)| n.starts_with("trunk") && t.data().iter().any(|v| *v > 0.0));
        assert!(any_positive, "fisher is identically zero");
    }
}
