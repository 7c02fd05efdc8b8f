//! Depth-aware view selection: handcrafted view embeddings, PCA reduction,
//! clustering, greedy depth-coverage expansion with pruning, silhouette
//! ranking of the leftover views, and a per-facet completeness check.

mod kmeans;
mod pca;

pub use kmeans::{kmeans, Kmeans};
pub use pca::{jacobi_eigen, pca_auto_k, pca_reduce, Pca};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::img::ScalarMap;
use crate::scene::ViewRecord;

pub const APPEARANCE_DIM: usize = 10;
pub const TERRAIN_DIM: usize = 7;
pub const META_DIM: usize = 4;
pub const JOINT_DIM: usize = APPEARANCE_DIM + TERRAIN_DIM + META_DIM;

/// The three statistic blocks of a joint embedding, as (name, start, end).
pub const BLOCKS: [(&str, usize, usize); 3] = [
    ("appearance", 0, APPEARANCE_DIM),
    ("terrain", APPEARANCE_DIM, APPEARANCE_DIM + TERRAIN_DIM),
    ("meta", APPEARANCE_DIM + TERRAIN_DIM, JOINT_DIM),
];

/// Handcrafted per-view feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewEmbedding {
    /// Channel means/variances + gradient-energy histogram.
    pub appearance: Vec<f64>,
    /// Depth quantiles, range, and roughness.
    pub terrain: Vec<f64>,
    /// Sun angles + timestamp.
    pub meta: Vec<f64>,
    /// Concatenation; standardized per dimension by [`normalize_joint`].
    pub joint: Vec<f64>,
}

fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Compute the deterministic statistic blocks for one view. The joint
/// vector starts as the raw concatenation; call [`normalize_joint`] on the
/// whole pool before distance computations.
pub fn embed_view(v: &ViewRecord) -> ViewEmbedding {
    let (w, h) = (v.rgb.width, v.rgb.height);
    // Appearance: channel means and variances.
    let mut mean = [0.0; 3];
    for px in v.rgb.data.chunks_exact(3) {
        for c in 0..3 {
            mean[c] += px[c];
        }
    }
    let npix = (w * h) as f64;
    for m in &mut mean {
        *m /= npix;
    }
    let mut var = [0.0; 3];
    for px in v.rgb.data.chunks_exact(3) {
        for c in 0..3 {
            var[c] += (px[c] - mean[c]) * (px[c] - mean[c]);
        }
    }
    for s in &mut var {
        *s /= npix;
    }
    // Gradient-energy histogram over interior luma gradients, fixed bins.
    let mut hist = [0.0; 4];
    let mut count = 0.0;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let l = luma(v.rgb.pixel(x, y));
            let g = (luma(v.rgb.pixel(x + 1, y)) - l).abs()
                + (luma(v.rgb.pixel(x, y + 1)) - l).abs();
            let bin = if g < 0.02 {
                0
            } else if g < 0.05 {
                1
            } else if g < 0.12 {
                2
            } else {
                3
            };
            hist[bin] += 1.0;
            count += 1.0;
        }
    }
    if count > 0.0 {
        for b in &mut hist {
            *b /= count;
        }
    }
    let appearance: Vec<f64> = mean.iter().chain(var.iter()).chain(hist.iter()).copied().collect();

    // Terrain: depth quantiles, range, and roughness over hit pixels.
    let mut hits: Vec<f64> = v.depth_gt.data.iter().copied().filter(|d| *d >= 0.0).collect();
    hits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rough = 0.0;
    let mut rcount = 0.0;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            if v.depth_gt.is_hit(x, y) && v.depth_gt.is_hit(x + 1, y) && v.depth_gt.is_hit(x, y + 1)
            {
                let d = v.depth_gt.at(x, y);
                rough += (v.depth_gt.at(x + 1, y) - d).abs() + (v.depth_gt.at(x, y + 1) - d).abs();
                rcount += 1.0;
            }
        }
    }
    let terrain = vec![
        quantile(&hits, 0.10),
        quantile(&hits, 0.25),
        quantile(&hits, 0.50),
        quantile(&hits, 0.75),
        quantile(&hits, 0.90),
        hits.last().copied().unwrap_or(0.0) - hits.first().copied().unwrap_or(0.0),
        if rcount > 0.0 { rough / rcount } else { 0.0 },
    ];

    // Meta: sun azimuth (as cos/sin), elevation, timestamp.
    let az = v.sun_dir.y.atan2(v.sun_dir.x);
    let meta = vec![az.cos(), az.sin(), v.sun_dir.z, v.timestamp];

    let joint: Vec<f64> = appearance
        .iter()
        .chain(terrain.iter())
        .chain(meta.iter())
        .copied()
        .collect();
    ViewEmbedding {
        appearance,
        terrain,
        meta,
        joint,
    }
}

/// Standardize every joint dimension over the pool to zero mean and unit
/// variance (constant dimensions become identically zero).
pub fn normalize_joint(embs: &mut [ViewEmbedding]) {
    if embs.is_empty() {
        return;
    }
    let n = embs.len() as f64;
    for c in 0..JOINT_DIM {
        let mean: f64 = embs.iter().map(|e| e.joint[c]).sum::<f64>() / n;
        let var: f64 = embs.iter().map(|e| (e.joint[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for e in embs.iter_mut() {
            e.joint[c] = if sd > 1e-12 { (e.joint[c] - mean) / sd } else { 0.0 };
        }
    }
}

/// Stack normalized joint vectors into an (n, JOINT_DIM) matrix.
pub fn joint_matrix(embs: &[ViewEmbedding]) -> Result<Tensor> {
    let data: Vec<f64> = embs.iter().flat_map(|e| e.joint.iter().copied()).collect();
    Tensor::new(vec![embs.len(), JOINT_DIM], data)
}

/// Min/max surface depth of one view (None if every ray misses).
pub fn depth_range(d: &ScalarMap) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &d.data {
        if v >= 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo.is_finite() {
        Some((lo, hi))
    } else {
        None
    }
}

fn span(sel: &[usize], ranges: &[(f64, f64)]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in sel {
        lo = lo.min(ranges[i].0);
        hi = hi.max(ranges[i].1);
    }
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Depth coverage ratio C(S): the depth-value range spanned by the selected
/// views over the range spanned by the whole pool.
pub fn coverage(sel: &[usize], ranges: &[(f64, f64)]) -> f64 {
    let all: Vec<usize> = (0..ranges.len()).collect();
    let denom = span(&all, ranges);
    if denom <= 0.0 {
        return 1.0;
    }
    span(sel, ranges) / denom
}

/// Grow `s0` by the view with the largest coverage gain (ties: lowest
/// index) until C(S) >= tau, then prune in reverse addition order any view
/// whose removal keeps both the threshold and per-cluster representation.
pub fn greedy_expand(
    s0: &[usize],
    ranges: &[(f64, f64)],
    labels: &[usize],
    tau: f64,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("coverage threshold {tau} outside [0,1]")));
    }
    if labels.len() != ranges.len() {
        return Err(Error::Contract("greedy_expand: labels/ranges mismatch".into()));
    }
    let mut sel: Vec<usize> = s0.to_vec();
    while coverage(&sel, ranges) < tau {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..ranges.len() {
            if sel.contains(&i) {
                continue;
            }
            let mut cand = sel.clone();
            cand.push(i);
            let gain = coverage(&cand, ranges);
            // Ascending scan + strict comparison = lowest-index tie break.
            if best.map_or(true, |(_, bg)| gain > bg) {
                best = Some((i, gain));
            }
        }
        match best {
            Some((i, _)) => sel.push(i),
            None => break, // pool exhausted; C(S) = C(I) >= tau is impossible to miss
        }
    }
    // Prune in reverse addition order.
    let mut i = sel.len();
    while i > 0 {
        i -= 1;
        let cand: Vec<usize> = sel
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .collect();
        if cand.is_empty() || coverage(&cand, ranges) < tau {
            continue;
        }
        let clusters_kept = {
            let present = |s: &[usize], c: usize| s.iter().any(|&v| labels[v] == c);
            let mut ok = true;
            for &v in &sel {
                let c = labels[v];
                if present(&sel, c) && !present(&cand, c) {
                    ok = false;
                    break;
                }
            }
            ok
        };
        if clusters_kept {
            sel.remove(i);
        }
    }
    Ok(sel)
}

fn mean_dist(x: &Tensor, from: usize, members: &[usize]) -> f64 {
    let d = x.cols();
    let data = x.data();
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut s = 0.0;
    for &m in members {
        s += row(from)
            .iter()
            .zip(row(m))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    s / members.len() as f64
}

/// Rank the residual views (pool minus selection) by the silhouette score
/// they would have when added to the selection's clustering, descending
/// (ties: lowest index). With a single represented cluster the silhouette
/// is undefined; fall back to distance-to-centroid, farthest first.
pub fn silhouette_rank(
    x: &Tensor,
    sel: &[usize],
    labels: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if sel.is_empty() {
        return Err(Error::Contract("silhouette_rank: empty selection".into()));
    }
    let n = x.rows();
    let d = x.cols();
    let data = x.data();
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut cluster_ids: Vec<usize> = Vec::new();
    for &s in sel {
        match cluster_ids.iter().position(|&c| c == labels[s]) {
            Some(k) => clusters[k].push(s),
            None => {
                cluster_ids.push(labels[s]);
                clusters.push(vec![s]);
            }
        }
    }
    let residuals: Vec<usize> = (0..n).filter(|i| !sel.contains(i)).collect();
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(residuals.len());
    if clusters.len() < 2 {
        // Single-cluster fallback: rank by distance to the cluster centroid.
        let members = &clusters[0];
        let mut centroid = vec![0.0; d];
        for &m in members {
            for (c, v) in centroid.iter_mut().zip(row(m)) {
                *c += v;
            }
        }
        for c in &mut centroid {
            *c /= members.len() as f64;
        }
        for &r in &residuals {
            let dist = row(r)
                .iter()
                .zip(&centroid)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            scored.push((r, dist));
        }
    } else {
        for &r in &residuals {
            // Assign to the cluster with the smallest mean distance.
            let mut dists: Vec<f64> = clusters.iter().map(|m| mean_dist(x, r, m)).collect();
            let own = dists
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let a = dists.remove(own);
            let b = dists.iter().copied().fold(f64::INFINITY, f64::min);
            let s = if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
            scored.push((r, s));
        }
    }
    scored.sort_by(|p, q| q.1.partial_cmp(&p.1).unwrap().then(p.0.cmp(&q.0)));
    Ok(scored)
}

/// Per-facet completeness of a selection against the pool.
#[derive(Clone, Debug)]
pub struct Validation {
    /// (facet name, score in [0,1]) per statistic block plus "joint".
    pub facets: Vec<(String, f64)>,
    pub floor: f64,
    pub pass: bool,
}

fn block_score(embs: &[ViewEmbedding], sel: &[usize], lo: usize, hi: usize) -> f64 {
    let slice = |i: usize| &embs[i].joint[lo..hi];
    let dist = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut diameter = 0.0f64;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            diameter = diameter.max(dist(slice(i), slice(j)));
        }
    }
    if diameter == 0.0 {
        return 1.0;
    }
    let mut max_gap = 0.0f64;
    for i in 0..embs.len() {
        let gap = sel
            .iter()
            .map(|&s| dist(slice(i), slice(s)))
            .fold(f64::INFINITY, f64::min);
        max_gap = max_gap.max(gap);
    }
    (1.0 - max_gap / diameter).clamp(0.0, 1.0)
}

/// Score each statistic block: 1 minus the worst gap from any pool view to
/// its nearest selected view, normalized by the pool's block diameter.
/// PASS iff every facet clears `floor`. Embeddings must be normalized.
pub fn validate_selection(embs: &[ViewEmbedding], sel: &[usize], floor: f64) -> Result<Validation> {
    if sel.is_empty() || embs.is_empty() {
        return Err(Error::Contract("validate_selection: empty input".into()));
    }
    let mut facets = Vec::new();
    for (name, lo, hi) in BLOCKS {
        facets.push((name.to_string(), block_score(embs, sel, lo, hi)));
    }
    facets.push(("joint".to_string(), block_score(embs, sel, 0, JOINT_DIM)));
    let pass = facets.iter().all(|(_, s)| *s >= floor);
    Ok(Validation {
        facets,
        floor,
        pass,
    })
}

#[derive(Clone, Debug)]
pub struct SelectConfig {
    pub tau: f64,
    pub facet_floor: f64,
    pub seed: u64,
    pub variance_target: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            tau: 0.95,
            facet_floor: 0.35,
            seed: 0,
            variance_target: 0.95,
        }
    }
}

/// Full selection outcome.
#[derive(Clone, Debug)]
pub struct SelectionReport {
    pub selected: Vec<usize>,
    pub coverage: f64,
    pub representatives: Vec<usize>,
    pub cluster_labels: Vec<usize>,
    /// Residual views ranked by complementarity, best first.
    pub ranking: Vec<(usize, f64)>,
    pub validation: Validation,
    pub pca_dims: usize,
    pub explained_variance: f64,
}

impl SelectionReport {
    /// Human-readable report.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "selected: {:?}\ncoverage: {:.4}\nrepresentatives: {:?}\n",
            self.selected, self.coverage, self.representatives
        ));
        s.push_str(&format!(
            "pca_dims: {} (explained variance {:.4})\n",
            self.pca_dims, self.explained_variance
        ));
        s.push_str("residual ranking (index: score):\n");
        for (i, sc) in &self.ranking {
            s.push_str(&format!("  {i}: {sc:.4}\n"));
        }
        s.push_str(&format!(
            "validation ({}): floor {:.2}\n",
            if self.validation.pass { "PASS" } else { "FAIL" },
            self.validation.floor
        ));
        for (name, sc) in &self.validation.facets {
            s.push_str(&format!("  {name}: {sc:.4}\n"));
        }
        s
    }

    /// Selected-view manifest, one pool index per line.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for i in &self.selected {
            s.push_str(&format!("{i}\n"));
        }
        s
    }
}

/// Run the full pipeline: embed, normalize, reduce, cluster, expand from
/// the cluster representatives, rank residuals, validate.
pub fn select_views(views: &[ViewRecord], cfg: &SelectConfig) -> Result<SelectionReport> {
    if views.len() < 2 {
        return Err(Error::Config("view selection needs at least two views".into()));
    }
    let mut embs: Vec<ViewEmbedding> = views.iter().map(embed_view).collect();
    normalize_joint(&mut embs);
    let x = joint_matrix(&embs)?;
    let pca_dims = pca_auto_k(&x, cfg.variance_target)?;
    let (reduced, pca) = pca_reduce(&x, pca_dims)?;
    let k = (views.len() as f64).sqrt().round().max(1.0) as usize;
    let km = kmeans(&reduced, k.min(views.len()), cfg.seed)?;
    let ranges: Vec<(f64, f64)> = views
        .iter()
        .map(|v| depth_range(&v.depth_gt).unwrap_or((0.0, 0.0)))
        .collect();
    let mut s0 = km.representatives.clone();
    s0.sort_unstable();
    s0.dedup();
    let selected = greedy_expand(&s0, &ranges, &km.labels, cfg.tau)?;
    let ranking = silhouette_rank(&reduced, &selected, &km.labels)?;
    let validation = validate_selection(&embs, &selected, cfg.facet_floor)?;
    Ok(SelectionReport {
        coverage: coverage(&selected, &ranges),
        selected,
        representatives: km.representatives,
        cluster_labels: km.labels,
        ranking,
        validation,
        pca_dims,
        explained_variance: pca.explained_variance(),
    })
}
