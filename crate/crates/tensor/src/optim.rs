//! Adam with bias correction.

use indexmap::IndexMap;

use crate::element::Element;
use crate::error::{invalid, Result, TensorError};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update of a single parameter buffer at step `t` (1-based).
pub fn adam_update<T: Element>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::lit(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer state keyed by parameter name.
pub struct Adam<T: Element> {
    pub config: AdamConfig,
    step: u64,
    m: IndexMap<String, Vec<T>>,
    v: IndexMap<String, Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Result<Self> {
        if !(config.lr >= 0.0 && (0.0..1.0).contains(&config.beta1) && (0.0..1.0).contains(&config.beta2)) {
            return Err(invalid("adam", format!("invalid hyperparameters {config:?}")));
        }
        let zeros = |n| vec![T::zero(); n];
        Ok(Adam {
            config,
            step: 0,
            m: store.params().map(|(k, p)| (k.to_string(), zeros(p.numel()))).collect(),
            v: store.params().map(|(k, p)| (k.to_string(), zeros(p.numel()))).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter using its accumulated gradient
    /// (absent gradients count as zero).
    pub fn step(&mut self, store: &ParamStore<T>) -> Result<()> {
        for (name, _) in store.params() {
            if !self.m.contains_key(name) {
                return Err(TensorError::MissingState(name.to_string()));
            }
        }
        self.step += 1;
        for (name, p) in store.params() {
            let m = self.m.get_mut(name).expect("checked above");
            let v = self.v.get_mut(name).expect("checked above");
            if m.len() != p.numel() {
                return Err(invalid("adam", format!("state for `{name}` has {} values, parameter {}", m.len(), p.numel())));
            }
            let grad = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
            adam_update(&mut p.data_mut(), &grad, m, v, self.step, &self.config);
        }
        Ok(())
    }
}
