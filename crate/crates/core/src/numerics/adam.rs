use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameters or gradients addressed by stable path.
pub type ParamMap = BTreeMap<String, Tensor>;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamState {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, path: &str) -> Option<&[f64]> {
        self.first.get(path).map(Vec::as_slice)
    }

    pub fn second_moment(&self, path: &str) -> Option<&[f64]> {
        self.second.get(path).map(Vec::as_slice)
    }

    /// One update of every parameter. A parameter without an entry in
    /// `grads` is treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamMap, grads: &ParamMap) -> Result<()> {
        for (path, g) in grads {
            let p = params
                .get(path)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {path}")))?;
            if p.shape() != g.shape() {
                return Err(Error::dim("adam_step", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite { path: path.clone() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (path, p) in params.iter_mut() {
            let n = p.len();
            let m = self.first.entry(path.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(path.clone()).or_insert_with(|| vec![0.0; n]);
            let g = grads.get(path).map(Tensor::data);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]);
                *w *= decay;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
