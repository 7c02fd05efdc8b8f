//! Minimal dense linear algebra and reverse-mode autodiff for small
//! fully-connected networks, plus Adam.

pub mod adam;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, NamedTensors, ParamsMut};
pub use gradcheck::grad_check;
pub use tape::{sigmoid, softplus, Grads, Tape, ValueId};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_identity_passthrough() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let x = t.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_zero_weights_returns_bias() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::zeros(&[2, 2]));
        let b = t.constant(Tensor::from_vec(vec![1.0, 1.0]));
        let x = t.constant(Tensor::from_rows(&[vec![9.0, -2.0]]).unwrap());
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 1.0]);
    }

    #[test]
    fn linear_hand_matrix_multiply() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn linear_shape_mismatch_is_dim_error() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2]));
        let x = t.constant(Tensor::zeros(&[1, 2]));
        assert!(t.linear(x, w, b).is_err());
    }

    #[test]
    fn backward_polynomial() {
        // loss = theta^2 at theta = 3 -> grad 6
        let mut t = Tape::new();
        let p = t.leaf(Tensor::scalar(3.0));
        let sq = t.square(p).unwrap();
        let loss = t.sum_all(sq).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().data()[0], 6.0);
    }

    #[test]
    fn backward_inactive_relu() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::scalar(-1.0));
        let r = t.relu(p).unwrap();
        let loss = t.sum_all(r).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().data()[0], 0.0);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::scalar(0.0));
        let s = t.sigmoid(p).unwrap();
        let loss = t.sum_all(s).unwrap();
        let g = t.backward(loss).unwrap();
        assert!((g.get(p).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let s = t.square(p).unwrap();
        assert!(t.backward(s).is_err());
    }

    #[test]
    fn shared_subexpression_accumulates_additively() {
        // loss = x*x + x  => dloss/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(5.0));
        let xx = t.mul(x, x).unwrap();
        let s = t.add(xx, x).unwrap();
        let loss = t.sum_all(s).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data()[0], 11.0);
    }

    #[test]
    fn activations_pass_grad_check_at_random_points() {
        // Every activation the field model uses, checked over several seeds.
        type LossFn = fn(&mut Tape, &[ValueId]) -> crate::error::Result<ValueId>;
        let cases: Vec<(&str, LossFn)> = vec![
            ("relu", |t, ids| {
                let a = t.relu(ids[0])?;
                let sq = t.square(a)?;
                t.sum_all(sq)
            }),
            ("sigmoid", |t, ids| {
                let a = t.sigmoid(ids[0])?;
                let sq = t.square(a)?;
                t.sum_all(sq)
            }),
            ("softplus", |t, ids| {
                let a = t.softplus(ids[0])?;
                let sq = t.square(a)?;
                t.sum_all(sq)
            }),
            ("exp", |t, ids| {
                let a = t.exp(ids[0])?;
                t.sum_all(a)
            }),
            ("log", |t, ids| {
                let sq = t.square(ids[0])?;
                let shifted = t.affine(sq, 1.0, 0.5)?;
                let l = t.log(shifted)?;
                t.sum_all(l)
            }),
        ];
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = [Tensor::randn(&[6], 1.0, &mut rng)];
            for (name, f) in &cases {
                // Nudge away from the relu kink.
                let mut pt = p[0].clone();
                for v in pt.data_mut() {
                    if v.abs() < 1e-3 {
                        *v += 0.01;
                    }
                }
                let err = grad_check(f, &[pt], 1e-5).unwrap();
                assert!(err < 1e-4, "{name} seed {seed}: err {err}");
            }
        }
    }

    #[test]
    fn structured_ops_pass_grad_check() {
        let f = |t: &mut Tape, ids: &[ValueId]| {
            // Exercise linear, concat, gather, row_scale, segment_sum,
            // render_weights, sum_axis1, div in one composite function.
            let x = t.constant(Tensor::from_rows(&[
                vec![0.3, -0.2],
                vec![0.1, 0.4],
                vec![-0.5, 0.2],
                vec![0.7, 0.9],
            ]).unwrap());
            let b = t.constant(Tensor::zeros(&[3]));
            let h = t.linear(x, ids[0], b)?; // (4,3)
            let tbl = ids[1]; // (2,3)
            let e = t.gather_rows(tbl, &[0, 1, 0, 1])?;
            let cat = t.concat(&[h, e])?; // (4,6)
            let sp = t.softplus(cat)?;
            let sig = t.sum_axis1(sp)?; // (4)
            let sig2 = t.reshape(sig, vec![2, 2])?;
            let scaled = t.affine(sig2, 0.2, 0.0)?;
            let alpha_pre = t.sigmoid(scaled)?;
            let w = t.render_weights(alpha_pre)?; // (2,2)
            let wflat = t.reshape(w, vec![4, 1])?;
            let wcol = t.reshape(wflat, vec![4])?;
            let rs = t.row_scale(e, wcol)?; // (4,3)
            let seg = t.segment_sum(rs, 2)?; // (2,3)
            let num = t.sum_all(seg)?;
            let den0 = t.sum_all(w)?;
            let den = t.max_const(den0, 1e-8)?;
            t.div(num, den)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts = [
            Tensor::randn(&[3, 2], 0.5, &mut rng),
            Tensor::randn(&[2, 3], 0.5, &mut rng),
        ];
        let err = grad_check(&f, &pts, 1e-5).unwrap();
        assert!(err < 1e-4, "err {err}");
    }
}
