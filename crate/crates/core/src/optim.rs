//! Adam and the stepwise learning-rate decay.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

pub const DEFAULT_INITIAL_LR: f64 = 1e-4;
pub const LR_FLOOR: f64 = 5e-6;
/// Multiplicative decay applied once per epoch, `10^-0.05`.
pub const LR_DECAY_EXPONENT: f64 = -0.05;

/// `initial_lr * (10^-0.05)^epoch`, never below [`LR_FLOOR`].
pub fn lr_schedule(epoch: u64, initial_lr: f64) -> f64 {
    let decayed = initial_lr * libm::pow(10.0, LR_DECAY_EXPONENT * epoch as f64);
    decayed.max(LR_FLOOR.min(initial_lr))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub learning_rate: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::invalid("adam", format!("learning rate {learning_rate} must be positive")));
        }
        Ok(OptimizerState {
            config: AdamConfig::default(),
            learning_rate,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut OptimizerState<T>) -> Result<()> {
    for (name, p) in params.iter() {
        if p.grad.is_none() {
            return Err(Error::MissingGradient(name.to_string()));
        }
    }
    let t = state.step + 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - libm::pow(beta1, t as f64);
    let bc2 = 1.0 - libm::pow(beta2, t as f64);
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
    let step_size = T::of(state.learning_rate / bc1);
    let inv_sqrt_bc2 = T::of(1.0 / libm::sqrt(bc2));
    let eps = T::of(eps);

    for (name, p) in params.iter_mut() {
        let n = p.len();
        let (m, v) = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
        let grad = p.grad.take().expect("checked above");
        let data = p.data_mut();
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + one_b1 * g;
            v[i] = b2 * v[i] + one_b2 * g * g;
            data[i] -= step_size * m[i] / (v[i].sqrt() * inv_sqrt_bc2 + eps);
        }
        p.grad = Some(grad);
    }
    state.step = t;
    Ok(())
}
