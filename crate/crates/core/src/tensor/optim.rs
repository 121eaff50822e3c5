use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

/// Bias-corrected Adam with optional decoupled-from-norms L2 weight decay.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            state: AdamState {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            },
        }
    }

    /// One update from the gradients held in `store`. Gradients are left in
    /// place; call [`ParamStore::zero_grad`] before the next accumulation.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (_, p) in store.iter() {
            if !p.grad.all_finite() {
                return Err(Error::Divergence { param: p.name.clone() });
            }
        }
        self.state.t += 1;
        let t = self.state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.lr, self.weight_decay);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let decay = if p.no_decay { 0.0 } else { wd };
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            let grads = p.grad.data().to_vec();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[j] + decay * *w;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
