//! Lloyd's k-means with deterministic seeding and an empty-cluster
//! re-seed rule.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Kmeans {
    pub labels: Vec<usize>,
    /// (k, d) centroid matrix.
    pub centroids: Tensor,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    /// Index of the point nearest each centroid (ties: lowest index).
    pub representatives: Vec<usize>,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cluster the rows of `x` (n, d) into `k` groups. Deterministic per seed:
/// initial centroids are a random sample of distinct points. An empty
/// cluster is re-seeded at the point farthest from its current centroid.
pub fn kmeans(x: &Tensor, k: usize, seed: u64) -> Result<Kmeans> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || k > n {
        return Err(Error::Config(format!("kmeans: k={k} outside 1..={n}")));
    }
    let data = x.data();
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xC1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut centroids: Vec<Vec<f64>> = order[..k].iter().map(|&i| row(i).to_vec()).collect();
    let mut labels = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    let mut inertia = 0.0;

    for _iter in 0..100 {
        inertia = 0.0;
        for i in 0..n {
            let (mut best, mut best_d) = (0usize, f64::INFINITY);
            for (c, cent) in centroids.iter().enumerate() {
                let dd = dist_sq(row(i), cent);
                if dd < best_d {
                    best = c;
                    best_d = dd;
                }
            }
            labels[i] = best;
            inertia += best_d;
        }
        debug_assert!(
            inertia <= prev_inertia + 1e-9,
            "inertia increased: {prev_inertia} -> {inertia}"
        );
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for c in 0..d {
                sums[labels[i]][c] += row(i)[c];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed at the point farthest from its own centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist_sq(row(a), &centroids[labels[a]])
                            .partial_cmp(&dist_sq(row(b), &centroids[labels[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centroids[c] = row(far).to_vec();
            } else {
                for j in 0..d {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        if (prev_inertia - inertia).abs() < 1e-12 {
            break;
        }
        prev_inertia = inertia;
    }

    let representatives: Vec<usize> = (0..k)
        .map(|c| {
            (0..n)
                .filter(|&i| labels[i] == c)
                .min_by(|&a, &b| {
                    dist_sq(row(a), &centroids[c])
                        .partial_cmp(&dist_sq(row(b), &centroids[c]))
                        .unwrap()
                })
                .unwrap_or(0)
        })
        .collect();
    let flat: Vec<f64> = centroids.into_iter().flatten().collect();
    Ok(Kmeans {
        labels,
        centroids: Tensor::new(vec![k, d], flat)?,
        inertia,
        representatives,
    })
}
