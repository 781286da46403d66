//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    /// Default learning rate; entries may override it.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.03,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    rejected: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        AdamW {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
            rejected: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Steps refused because a gradient was not finite.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Applies one update. Frozen entries and entries without a gradient are
    /// left alone. Returns `false`, changing nothing but the incident count,
    /// when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<bool> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape("adamw_step", &[grads.len()], &[store.len()]));
        }
        for (e, gr) in store.entries().iter().zip(grads) {
            if let Some(gr) = gr {
                if gr.shape() != e.value.shape() {
                    return Err(Error::shape("adamw_step", gr.shape(), e.value.shape()));
                }
            }
        }
        if grads.iter().flatten().any(|gr| !gr.all_finite()) {
            self.rejected += 1;
            return Ok(false);
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            weight_decay,
            eps,
            ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(gr) = &grads[i] else { continue };
            let entry = store.entry_mut(id);
            if entry.frozen {
                continue;
            }
            let lr = entry.lr.unwrap_or(self.cfg.lr);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((p, g), m), v) in entry.value.data_mut().iter_mut().zip(gr.data()).zip(m).zip(v) {
                *p *= 1.0 - lr * weight_decay;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
        Ok(true)
    }
}
