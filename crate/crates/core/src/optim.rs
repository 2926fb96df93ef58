//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Real;

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decay applied to denoiser parameters.
    pub weight_decay_denoiser: f64,
    /// Decay applied to language-model decoder parameters.
    pub weight_decay_decoder: f64,
}

impl AdamConfig {
    /// Learning rate, betas and decays reported for the full-scale model.
    pub const fn paper() -> Self {
        Self {
            lr: 6.4710e-5,
            beta1: 0.8,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay_denoiser: 2.8951e-5,
            weight_decay_decoder: 3.6998e-5,
        }
    }

    fn weight_decay(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Denoiser => self.weight_decay_denoiser,
            ParamGroup::Decoder => self.weight_decay_decoder,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::paper()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    /// First moments, one buffer per parameter in store order.
    pub m: Vec<Vec<F>>,
    /// Second moments.
    pub v: Vec<Vec<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros = || store.iter().map(|p| vec![F::zero(); p.tensor.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn check_layout(&self, store: &ParamStore<F>) -> Result<()> {
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "optimizer tracks {} parameters, model has {}",
                self.m.len(),
                store.len()
            )));
        }
        for ((p, m), v) in store.iter().zip(&self.m).zip(&self.v) {
            if m.len() != p.tensor.numel() || v.len() != p.tensor.numel() {
                return Err(Error::CheckpointMismatch(format!(
                    "optimizer moments for `{}` have the wrong size",
                    p.name
                )));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update over every parameter in `store`.
///
/// Every parameter must carry a gradient; use [`fill_missing_grads`] first
/// when part of the model did not take part in the loss.
pub fn adam_step<F: Real>(store: &mut ParamStore<F>, state: &mut AdamState<F>) -> Result<()> {
    state.check_layout(store)?;
    if let Some(p) = store.iter().find(|p| p.tensor.grad().is_none()) {
        return Err(Error::MissingGrad(p.name.clone()));
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (F::from_f64c(cfg.beta1), F::from_f64c(cfg.beta2));
    let (one_b1, one_b2) = (F::from_f64c(1.0 - cfg.beta1), F::from_f64c(1.0 - cfg.beta2));
    let (inv_bc1, inv_bc2) = (F::from_f64c(1.0 / bc1), F::from_f64c(1.0 / bc2));
    let lr = F::from_f64c(cfg.lr);
    let eps = F::from_f64c(cfg.epsilon);

    for ((param, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let decay = F::from_f64c(cfg.lr * cfg.weight_decay(param.group));
        let grad = param.tensor.grad().expect("checked above").to_vec();
        let data = param.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + one_b1 * g;
            v[i] = b2 * v[i] + one_b2 * g * g;
            let m_hat = m[i] * inv_bc1;
            let v_hat = v[i] * inv_bc2;
            data[i] = data[i] - decay * data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Gives every parameter without a gradient an explicit zero gradient.
pub fn fill_missing_grads<F: Real>(store: &mut ParamStore<F>) {
    for p in store.iter_mut() {
        if p.tensor.grad().is_none() {
            let zeros = vec![F::zero(); p.tensor.numel()];
            p.tensor.accumulate_grad(&zeros);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(values: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", ParamGroup::Denoiser, Tensor::from_vec(values));
        s
    }

    #[test]
    fn defaults_carry_reported_hyperparameters() {
        let c = AdamConfig::default();
        assert_eq!(c.lr, 6.4710e-5);
        assert_eq!(c.beta1, 0.8);
        assert_eq!(c.beta2, 0.999);
        assert_eq!(c.weight_decay_denoiser, 2.8951e-5);
        assert_eq!(c.weight_decay_decoder, 3.6998e-5);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut store = one_param(vec![0.5, -2.0]);
        let cfg = AdamConfig {
            weight_decay_denoiser: 0.0,
            ..AdamConfig::paper()
        };
        let mut state = AdamState::new(cfg, &store);
        fill_missing_grads(&mut store);
        adam_step(&mut store, &mut state).unwrap();
        assert_eq!(store.tensor(crate::params::ParamId(0)).data(), &[0.5, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = one_param(vec![1.0, 1.0, 1.0]);
        let cfg = AdamConfig {
            lr: 0.01,
            epsilon: 1e-12,
            weight_decay_denoiser: 0.0,
            ..AdamConfig::paper()
        };
        let mut state = AdamState::new(cfg, &store);
        store.get_mut(crate::params::ParamId(0)).tensor.accumulate_grad(&[3.0, -0.2, 1e-3]);
        adam_step(&mut store, &mut state).unwrap();
        let d = store.tensor(crate::params::ParamId(0)).data();
        for (got, want) in d.iter().zip([0.99, 1.01, 0.99]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let mut store = one_param(vec![2.0]);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay_denoiser: 0.5,
            ..AdamConfig::paper()
        };
        let mut state = AdamState::new(cfg, &store);
        fill_missing_grads(&mut store);
        adam_step(&mut store, &mut state).unwrap();
        assert!((store.tensor(crate::params::ParamId(0)).data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut store = one_param(vec![1.0]);
        let mut state = AdamState::new(AdamConfig::paper(), &store);
        assert!(matches!(adam_step(&mut store, &mut state), Err(Error::MissingGrad(_))));
        assert_eq!(state.step, 0);
    }
}
