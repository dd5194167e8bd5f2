//! Adam with bias-corrected moment estimates.

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, p)| Tensor::zeros(p.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.v[i]
    }

    /// Applies one update. A non-finite gradient aborts the step before any
    /// parameter or moment is touched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            if grads.get(id).shape() != store.get(id).shape() {
                return Err(Error::Shape(format!(
                    "gradient of {} has shape {:?}, parameter {:?}",
                    store.name(id),
                    grads.get(id).shape(),
                    store.get(id).shape()
                )));
            }
            if !grads.get(id).all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {}",
                    store.name(id)
                )));
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for id in store.ids() {
            let g = grads.get(id).data();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
