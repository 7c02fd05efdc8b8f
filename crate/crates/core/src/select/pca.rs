//! Principal-component analysis via a cyclic Jacobi eigensolver.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix: returns (eigenvalues,
/// eigenvectors as columns), sorted by descending eigenvalue.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-30 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| m[i][i]).collect();
    let eigvecs: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| v.iter().map(|row| row[i]).collect())
        .collect();
    (eigvals, eigvecs)
}

/// Result of a PCA projection.
#[derive(Clone, Debug)]
pub struct Pca {
    /// Top-k principal directions, each of length d.
    pub basis: Vec<Vec<f64>>,
    /// All d eigenvalues of the covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Per-dimension mean removed before projection.
    pub mean: Vec<f64>,
}

impl Pca {
    /// Fraction of total variance captured by the retained components.
    pub fn explained_variance(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        if total == 0.0 {
            return 1.0;
        }
        let kept: f64 = self.eigenvalues[..self.basis.len()]
            .iter()
            .map(|v| v.max(0.0))
            .sum();
        kept / total
    }
}

/// Project the mean-centered rows of `x` (n, d) onto their top-k principal
/// components.
pub fn pca_reduce(x: &Tensor, k: usize) -> Result<(Tensor, Pca)> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || k > d.min(n) {
        return Err(Error::Config(format!(
            "pca: k={k} outside 1..=min(n={n}, d={d})"
        )));
    }
    let data = x.data();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            mean[c] += data[r * d + c];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in 0..n {
        for i in 0..d {
            let di = data[r * d + i] - mean[i];
            for j in i..d {
                cov[i][j] += di * (data[r * d + j] - mean[j]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    let basis: Vec<Vec<f64>> = eigvecs[..k].to_vec();
    let mut red = vec![0.0; n * k];
    for r in 0..n {
        for (ci, b) in basis.iter().enumerate() {
            let mut s = 0.0;
            for c in 0..d {
                s += (data[r * d + c] - mean[c]) * b[c];
            }
            red[r * k + ci] = s;
        }
    }
    Ok((
        Tensor::new(vec![n, k], red)?,
        Pca {
            basis,
            eigenvalues: eigvals,
            mean,
        },
    ))
}

/// Smallest k whose retained components explain at least `target` of the
/// variance.
pub fn pca_auto_k(x: &Tensor, target: f64) -> Result<usize> {
    let kmax = x.cols().min(x.rows());
    let (_, full) = pca_reduce(x, kmax)?;
    let total: f64 = full.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total == 0.0 {
        return Ok(1);
    }
    let mut acc = 0.0;
    for (i, ev) in full.eigenvalues.iter().enumerate() {
        acc += ev.max(0.0);
        if acc / total >= target {
            return Ok(i + 1);
        }
    }
    Ok(kmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>() - 0.5).collect();
        Tensor::new(vec![n, d], data).unwrap()
    }

    #[test]
    fn line_data_is_fully_explained_by_one_component() {
        // Points on a line through the origin in R^3.
        let dir = [1.0, -2.0, 0.5];
        let data: Vec<f64> = (0..6)
            .flat_map(|i| dir.iter().map(move |v| v * i as f64))
            .collect();
        let x = Tensor::new(vec![6, 3], data).unwrap();
        let (_, pca) = pca_reduce(&x, 1).unwrap();
        assert!((pca.explained_variance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_k_data_reconstructs_losslessly() {
        // Random rank-2 data: n x 2 factors times 2 x 5 loadings.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let load: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
        let mut data = vec![0.0; 8 * 5];
        for r in 0..8 {
            let f = [rng.gen::<f64>(), rng.gen::<f64>()];
            for c in 0..5 {
                data[r * 5 + c] = f[0] * load[c] + f[1] * load[5 + c];
            }
        }
        let x = Tensor::new(vec![8, 5], data.clone()).unwrap();
        let (red, pca) = pca_reduce(&x, 2).unwrap();
        for r in 0..8 {
            for c in 0..5 {
                let mut rec = pca.mean[c];
                for (ci, b) in pca.basis.iter().enumerate() {
                    rec += red.at(r, ci) * b[c];
                }
                assert!((rec - data[r * 5 + c]).abs() < 1e-9, "({r},{c})");
            }
        }
    }

    #[test]
    fn reconstruction_error_matches_trailing_eigenvalues() {
        let x = random_matrix(10, 8, 3);
        let k = 3;
        let (red, pca) = pca_reduce(&x, k).unwrap();
        // Mean reconstruction error over rows (squared), times n-1, equals
        // the trailing eigenvalue sum times n-1; compare the per-sample
        // covariance-normalized quantities.
        let n = 10;
        let mut sq = 0.0;
        for r in 0..n {
            for c in 0..8 {
                let mut rec = pca.mean[c];
                for (ci, b) in pca.basis.iter().enumerate() {
                    rec += red.at(r, ci) * b[c];
                }
                let e = rec - x.at(r, c);
                sq += e * e;
            }
        }
        let trailing: f64 = pca.eigenvalues[k..].iter().sum();
        assert!((sq / (n as f64 - 1.0) - trailing).abs() < 1e-9);
    }

    #[test]
    fn eigenvalues_match_external_eigensolver() {
        let x = random_matrix(12, 6, 11);
        let (_, pca) = pca_reduce(&x, 6).unwrap();
        // Independent oracle: nalgebra's symmetric eigendecomposition of the
        // same covariance.
        let data = x.data();
        let mut mean = vec![0.0; 6];
        for r in 0..12 {
            for c in 0..6 {
                mean[c] += data[r * 6 + c] / 12.0;
            }
        }
        let mut cov = nalgebra::DMatrix::<f64>::zeros(6, 6);
        for r in 0..12 {
            for i in 0..6 {
                for j in 0..6 {
                    cov[(i, j)] +=
                        (data[r * 6 + i] - mean[i]) * (data[r * 6 + j] - mean[j]) / 11.0;
                }
            }
        }
        let mut want: Vec<f64> = nalgebra::SymmetricEigen::new(cov)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        want.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (got, want) in pca.eigenvalues.iter().zip(&want) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn oversized_k_is_rejected() {
        let x = random_matrix(4, 3, 1);
        assert!(pca_reduce(&x, 4).is_err());
        assert!(pca_reduce(&x, 0).is_err());
    }

    #[test]
    fn auto_k_hits_variance_target() {
        let x = random_matrix(10, 5, 9);
        let k = pca_auto_k(&x, 0.95).unwrap();
        let (_, pca) = pca_reduce(&x, k).unwrap();
        assert!(pca.explained_variance() >= 0.95);
        if k > 1 {
            let (_, smaller) = pca_reduce(&x, k - 1).unwrap();
            assert!(smaller.explained_variance() < 0.95);
        }
    }
}
