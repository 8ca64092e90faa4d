//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::store::ParamStore;

pub const ADAM_BETA1: f64 = 0.0;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const GENERATOR_LR: f64 = 1e-4;
pub const DISCRIMINATOR_LR: f64 = 4e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    /// β1 = 0, β2 = 0.999, eps = 1e-8.
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, ADAM_BETA1, ADAM_BETA2)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: ADAM_EPS,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every parameter named in `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            p.same_shape(g)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((theta, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *theta -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
