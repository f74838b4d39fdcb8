//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::params::{GradBuffer, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    /// Per-parameter step count; 0 means the parameter has never had a
    /// nonzero gradient and is left untouched (including weight decay).
    steps: Vec<u64>,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.iter().map(|(_, _, m)| Mat::zeros(m.rows, m.cols)).collect();
        Self { config, steps: vec![0; store.len()], m: zeros.clone(), v: zeros }
    }

    /// Step counts and first/second moments, one entry per parameter.
    pub fn state(&self) -> (&[u64], &[Mat], &[Mat]) {
        (&self.steps, &self.m, &self.v)
    }

    pub fn from_state(config: AdamWConfig, steps: Vec<u64>, m: Vec<Mat>, v: Vec<Mat>) -> Self {
        assert!(steps.len() == m.len() && m.len() == v.len(), "optimizer state lengths differ");
        Self { config, steps, m, v }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        let c = &self.config;
        for (id, g) in grads.iter() {
            if self.steps[id] == 0 && g.data.iter().all(|&x| x == 0.0) {
                continue;
            }
            self.steps[id] += 1;
            let t = self.steps[id] as i32;
            let bc1 = 1.0 - c.beta1.powi(t);
            let bc2 = 1.0 - c.beta2.powi(t);
            let p = store.value_mut(id);
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for k in 0..p.data.len() {
                let gk = g.data[k];
                p.data[k] -= c.lr * c.weight_decay * p.data[k];
                m.data[k] = c.beta1 * m.data[k] + (1.0 - c.beta1) * gk;
                v.data[k] = c.beta2 * v.data[k] + (1.0 - c.beta2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::default();
        let id = store.add("w", Mat::row_vector(vec![1.0, -1.0]));
        let cfg = AdamWConfig { weight_decay: 0.0, lr: 0.1, ..Default::default() };
        let mut opt = AdamW::new(cfg, &store);
        let mut g = GradBuffer::zeros_like(&store);
        g.add(id, &Mat::row_vector(vec![3.0, -0.5]));
        opt.step(&mut store, &g);
        let w = store.value(id);
        assert!((w.data[0] - 0.9).abs() < 1e-6);
        assert!((w.data[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn untouched_parameters_skip_decay() {
        let mut store = ParamStore::default();
        let id = store.add("w", Mat::row_vector(vec![1.0]));
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        let zero = GradBuffer::zeros_like(&store);
        opt.step(&mut store, &zero);
        assert_eq!(store.value(id).data[0], 1.0);
    }
}
