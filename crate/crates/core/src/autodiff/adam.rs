//! Adam with bias correction, keyed by parameter name.
//!
//! Models expose their tensors through [`ParamsMut`]; the `frozen_rows`
//! count lets an embedding table keep its first rows fixed while the rest
//! train (the update and the moment buffers both skip frozen rows, so a
//! later unfreeze would start cold).

use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Mutable walk over named parameters. `frozen_rows` is the number of
/// leading rows excluded from optimizer updates (0 for ordinary tensors).
pub trait ParamsMut {
    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, usize) -> Result<()>)
        -> Result<()>;
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Default)]
pub struct AdamState {
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One optimizer step. `lr` overrides the config learning rate (schedules
/// live in the caller). Aborts before touching any parameter if a gradient
/// is non-finite.
pub fn adam_step(
    params: &mut dyn ParamsMut,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {name}; step aborted"
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    params.for_each_mut(&mut |name, theta, frozen_rows| {
        let Some(g) = grads.get(name) else {
            return Ok(());
        };
        if g.shape() != theta.shape() {
            return Err(Error::Dim(format!(
                "gradient shape {:?} vs parameter {:?} for {name}",
                g.shape(),
                theta.shape()
            )));
        }
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(theta.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(theta.shape()));

        let cols = theta.cols();
        let start = frozen_rows * if theta.shape().len() == 2 { cols } else { 0 };
        let td = theta.data_mut();
        for i in start..td.len() {
            let gi = g.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            td[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
        }
        Ok(())
    })
}

/// Flat adapter so free tensors (tests, small fits) can use the optimizer.
pub struct NamedTensors(pub Vec<(String, Tensor)>);

impl NamedTensors {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl ParamsMut for NamedTensors {
    fn for_each_mut(
        &mut self,
        f: &mut dyn FnMut(&str, &mut Tensor, usize) -> Result<()>,
    ) -> Result<()> {
        for (name, t) in &mut self.0 {
            f(name, t, 0)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> NamedTensors {
        NamedTensors(vec![("p".into(), Tensor::scalar(v))])
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut p = one_param(1.5);
        let mut st = AdamState::new();
        let grads = BTreeMap::from([("p".to_string(), Tensor::scalar(0.0))]);
        adam_step(&mut p, &grads, &mut st, &AdamConfig::default(), 0.01).unwrap();
        assert_eq!(p.get("p").unwrap().data()[0], 1.5);
    }

    #[test]
    fn single_step_matches_hand_expansion() {
        // From zero state, grad = 1: mhat = 1, vhat = 1, so the update is
        // lr / (1 + eps) regardless of the betas.
        let mut p = one_param(0.0);
        let mut st = AdamState::new();
        let grads = BTreeMap::from([("p".to_string(), Tensor::scalar(1.0))]);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &grads, &mut st, &cfg, 0.01).unwrap();
        let expected = -0.01 / (1.0 + cfg.eps);
        assert!((p.get("p").unwrap().data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_grad_descends() {
        let mut p = one_param(0.0);
        let mut st = AdamState::new();
        let grads = BTreeMap::from([("p".to_string(), Tensor::scalar(2.0))]);
        for _ in 0..50 {
            adam_step(&mut p, &grads, &mut st, &AdamConfig::default(), 0.01).unwrap();
        }
        assert!(p.get("p").unwrap().data()[0] < 0.0);
    }

    #[test]
    fn non_finite_grad_aborts_without_update() {
        let mut p = one_param(3.0);
        let mut st = AdamState::new();
        let grads = BTreeMap::from([("p".to_string(), Tensor::scalar(f64::NAN))]);
        assert!(adam_step(&mut p, &grads, &mut st, &AdamConfig::default(), 0.01).is_err());
        assert_eq!(p.get("p").unwrap().data()[0], 3.0);
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn frozen_rows_stay_fixed() {
        struct Table(Tensor);
        impl ParamsMut for Table {
            fn for_each_mut(
                &mut self,
                f: &mut dyn FnMut(&str, &mut Tensor, usize) -> Result<()>,
            ) -> Result<()> {
                f("embed", &mut self.0, 1)
            }
        }
        let mut tbl = Table(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let mut st = AdamState::new();
        let grads = BTreeMap::from([(
            "embed".to_string(),
            Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(),
        )]);
        for _ in 0..100 {
            adam_step(&mut tbl, &grads, &mut st, &AdamConfig::default(), 0.01).unwrap();
        }
        assert_eq!(tbl.0.at(0, 0), 1.0);
        assert_eq!(tbl.0.at(0, 1), 2.0);
        assert!(tbl.0.at(1, 0) < 3.0);
    }
}
