//! Training losses, staged on the tape.

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{Error, Result};

/// Plain photometric MSE over a (B,3) color batch against constant truth.
pub fn rgb_mse(t: &mut Tape, color: ValueId, gt: &Tensor) -> Result<ValueId> {
    let g = t.constant(gt.clone());
    let diff = t.sub(color, g)?;
    let sq = t.square(diff)?;
    t.mean_all(sq)
}

/// Uncertainty-weighted photometric loss: mean over rays of
/// `||err||^2 / (2 beta^2) + log beta`, with `beta` (B) on the tape.
///
/// Ray uncertainty is floored at the per-point minimum: rays that composite
/// to near-zero opacity would otherwise drive `log beta` to -inf.
pub fn rgb_beta_weighted(
    t: &mut Tape,
    color: ValueId,
    beta: ValueId,
    gt: &Tensor,
) -> Result<ValueId> {
    let beta = t.max_const(beta, crate::field::BETA_MIN)?;
    let g = t.constant(gt.clone());
    let diff = t.sub(color, g)?;
    let sq = t.square(diff)?;
    let per_ray = t.sum_axis1(sq)?; // (B)
    let beta_sq = t.square(beta)?;
    let denom = t.affine(beta_sq, 2.0, 0.0)?;
    let weighted = t.div(per_ray, denom)?;
    let logb = t.log(beta)?;
    let total = t.add(weighted, logb)?;
    t.mean_all(total)
}

/// Choose the scheduled photometric loss: plain MSE for the first two
/// epochs (while geometry settles), uncertainty-weighted afterwards.
pub fn rgb_scheduled(
    t: &mut Tape,
    epoch: usize,
    color: ValueId,
    beta: ValueId,
    gt: &Tensor,
) -> Result<ValueId> {
    if epoch < 2 {
        rgb_mse(t, color, gt)
    } else {
        rgb_beta_weighted(t, color, beta, gt)
    }
}

/// Knowledge-distillation anchor: mean squared distance between the
/// student/composite color and a teacher color already on the tape
/// (typically a no-grad constant path).
pub fn kd_anchor(t: &mut Tape, color: ValueId, teacher: ValueId) -> Result<ValueId> {
    let diff = t.sub(color, teacher)?;
    let sq = t.square(diff)?;
    t.mean_all(sq)
}

/// Elastic-weight-consolidation penalty, staged over named parameter
/// leaves: `lambda/2 * sum_i F_i (theta_i - anchor_i)^2`.
///
/// `leaves` pairs each trainable leaf with its name; anchors and Fisher
/// diagonals are keyed the same way. Callers with `lambda == 0` must skip
/// this entirely (the penalty would only add float noise).
pub fn ewc_penalty(
    t: &mut Tape,
    leaves: &[(String, ValueId)],
    anchor: &std::collections::BTreeMap<String, Tensor>,
    fisher: &std::collections::BTreeMap<String, Tensor>,
    lambda: f64,
) -> Result<ValueId> {
    if lambda <= 0.0 {
        return Err(Error::Contract(
            "ewc_penalty called with non-positive lambda; skip it instead".into(),
        ));
    }
    let mut total: Option<ValueId> = None;
    for (name, leaf) in leaves {
        let (Some(a), Some(f)) = (anchor.get(name), fisher.get(name)) else {
            return Err(Error::Config(format!("ewc: no anchor/fisher for {name}")));
        };
        let ac = t.constant(a.clone());
        let diff = t.sub(*leaf, ac)?;
        let sq = t.square(diff)?;
        let weighted = t.mul_const_t(sq, f)?;
        let s = t.sum_all(weighted)?;
        total = Some(match total {
            Some(acc) => t.add(acc, s)?,
            None => s,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("ewc over no parameters".into()))?;
    t.affine(total, lambda / 2.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use std::collections::BTreeMap;

    #[test]
    fn beta_weighted_worked_example() {
        // One ray: squared error 0.02, beta 0.1:
        // 0.02 / (2 * 0.01) + ln 0.1 = 1 - 2.302585... = -1.302585...
        let mut t = Tape::new();
        let color = t.constant(Tensor::new(vec![1, 3], vec![0.1, 0.1, 0.0]).unwrap());
        let beta = t.constant(Tensor::from_vec(vec![0.1]));
        let gt = Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let loss = rgb_beta_weighted(&mut t, color, beta, &gt).unwrap();
        let want = 1.0 + 0.1f64.ln();
        assert!((t.value(loss).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn mse_of_exact_match_is_zero() {
        let mut t = Tape::new();
        let gt = Tensor::new(vec![2, 3], vec![0.2; 6]).unwrap();
        let color = t.constant(gt.clone());
        let loss = rgb_mse(&mut t, color, &gt).unwrap();
        assert_eq!(t.value(loss).data()[0], 0.0);
    }

    #[test]
    fn schedule_switches_at_epoch_two() {
        let gt = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        let eval = |epoch: usize| {
            let mut t = Tape::new();
            let color = t.constant(Tensor::new(vec![1, 3], vec![0.3, 0.0, 0.0]).unwrap());
            let beta = t.constant(Tensor::from_vec(vec![0.2]));
            let loss = rgb_scheduled(&mut t, epoch, color, beta, &gt).unwrap();
            t.value(loss).data()[0]
        };
        let mse = 0.09 / 3.0;
        assert!((eval(0) - mse).abs() < 1e-15);
        assert!((eval(1) - mse).abs() < 1e-15);
        let weighted = 0.09 / (2.0 * 0.04) + 0.2f64.ln();
        assert!((eval(2) - weighted).abs() < 1e-12);
    }

    #[test]
    fn ewc_worked_example_and_anchor_zero() {
        // Two params, F = (1, 0.5), theta - anchor = (0.5, -1):
        // lambda/2 * (1*0.25 + 0.5*1) = lambda/2 * 0.75.
        let anchor = BTreeMap::from([("p".to_string(), Tensor::from_vec(vec![1.0, 2.0]))]);
        let fisher = BTreeMap::from([("p".to_string(), Tensor::from_vec(vec![1.0, 0.5]))]);
        let mut t = Tape::new();
        let leaf = t.leaf(Tensor::from_vec(vec![1.5, 1.0]));
        let leaves = vec![("p".to_string(), leaf)];
        let pen = ewc_penalty(&mut t, &leaves, &anchor, &fisher, 2.0).unwrap();
        assert!((t.value(pen).data()[0] - 0.75).abs() < 1e-15);
        // At the anchor the penalty vanishes.
        let mut t2 = Tape::new();
        let at_anchor = t2.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let leaves2 = vec![("p".to_string(), at_anchor)];
        let pen2 = ewc_penalty(&mut t2, &leaves2, &anchor, &fisher, 2.0).unwrap();
        assert_eq!(t2.value(pen2).data()[0], 0.0);
    }

    #[test]
    fn ewc_rejects_zero_lambda() {
        let mut t = Tape::new();
        let leaf = t.leaf(Tensor::from_vec(vec![1.0]));
        let empty = BTreeMap::new();
        assert!(ewc_penalty(&mut t, &[("p".to_string(), leaf)], &empty, &empty, 0.0).is_err());
    }

    #[test]
    fn losses_pass_grad_check() {
        let gt = Tensor::new(vec![2, 3], vec![0.1, 0.4, 0.2, 0.6, 0.0, 0.3]).unwrap();
        let anchor = BTreeMap::from([(
            "x".to_string(),
            Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap(),
        )]);
        let fisher = BTreeMap::from([(
            "x".to_string(),
            Tensor::new(vec![2, 3], vec![0.3, 1.0, 0.2, 0.5, 0.8, 0.1]).unwrap(),
        )]);
        let f = |t: &mut Tape, xs: &[ValueId]| -> Result<ValueId> {
            let beta = t.softplus(xs[1])?;
            let beta_row = t.reshape(beta, vec![2])?;
            let l1 = rgb_beta_weighted(t, xs[0], beta_row, &gt)?;
            let teacher = t.constant(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap());
            let l2 = kd_anchor(t, xs[0], teacher)?;
            let leaves = vec![("x".to_string(), xs[0])];
            let l3 = ewc_penalty(t, &leaves, &anchor, &fisher, 0.7)?;
            let a = t.add(l1, l2)?;
            t.add(a, l3)
        };
        let points = [
            Tensor::new(vec![2, 3], vec![0.3, 0.2, 0.5, 0.1, 0.4, 0.25]).unwrap(),
            Tensor::new(vec![2, 1], vec![-0.5, 0.8]).unwrap(),
        ];
        let rel = grad_check(&f, &points, 1e-5).unwrap();
        assert!(rel < 1e-4, "rel err {rel}");
    }
}
