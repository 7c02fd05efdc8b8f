//! Sinusoidal positional encoding.

use crate::autodiff::Tensor;

pub fn encoded_dim(levels: usize) -> usize {
    3 + 6 * levels
}

/// Encode M 3-D points: `[p, sin(2^k pi p), cos(2^k pi p)]` for
/// k = 0..levels-1, interleaved per frequency. Output is (M, 3 + 6L).
pub fn positional_encode(points: &[[f64; 3]], levels: usize) -> Tensor {
    assert!(levels >= 1, "encoding needs at least one level");
    let dim = encoded_dim(levels);
    let mut data = Vec::with_capacity(points.len() * dim);
    for p in points {
        data.extend_from_slice(p);
        for k in 0..levels {
            let f = (1u64 << k) as f64 * std::f64::consts::PI;
            for &c in p {
                let (s, co) = (f * c).sin_cos();
                data.push(s);
                data.push(co);
            }
        }
    }
    Tensor::new(vec![points.len(), dim], data).expect("encode dims")
}
