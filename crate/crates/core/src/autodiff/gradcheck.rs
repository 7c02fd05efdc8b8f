//! Central-difference gradient verification.

use super::tape::{Tape, ValueId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compare analytic gradients of a scalar-valued function against central
/// differences. Returns the max over all parameter elements of
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-8)`; the additive
/// floor keeps roundoff-level gradients (both sides ~0 but not bit-equal)
/// from registering as disagreement.
///
/// `f` must rebuild the computation from leaves each call; it is invoked
/// `2 * numel + 1` times.
pub fn grad_check<F>(f: &F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Contract(format!("eps {eps} outside (0, 1e-3]")));
    }

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = pts.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        let v = tape.value(loss).scalar_value()?;
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite function value".into()));
        }
        Ok(v)
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = points.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    let v0 = tape.value(loss).scalar_value()?;
    if !v0.is_finite() {
        return Err(Error::Numeric("non-finite function value".into()));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(points)
        .map(|(&id, p)| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut max_err: f64 = 0.0;
    let mut work: Vec<Tensor> = points.to_vec();
    for (pi, p) in points.iter().enumerate() {
        for ei in 0..p.numel() {
            let orig = p.data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[pi].data()[ei];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_near_exact() {
        // Central differences are exact to O(eps^2) for quadratics.
        let f = |t: &mut Tape, ids: &[ValueId]| {
            let sq = t.square(ids[0])?;
            t.sum_all(sq)
        };
        let p = [Tensor::from_vec(vec![1.3, -0.7, 2.0])];
        let err = grad_check(&f, &p, 1e-5).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn constant_loss_gives_zero_both_ways() {
        let f = |t: &mut Tape, ids: &[ValueId]| {
            let z = t.affine(ids[0], 0.0, 4.0)?;
            t.sum_all(z)
        };
        let p = [Tensor::from_vec(vec![0.5, 0.5])];
        let err = grad_check(&f, &p, 1e-5).unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn rejects_bad_eps() {
        let f = |t: &mut Tape, ids: &[ValueId]| t.sum_all(ids[0]);
        let p = [Tensor::scalar(1.0)];
        assert!(grad_check(&f, &p, 0.0).is_err());
        assert!(grad_check(&f, &p, 1e-2).is_err());
    }
}
