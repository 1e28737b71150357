//! Adam and the inverse square-root learning-rate schedule.

use alloc::vec::Vec;

use crate::graph::{Gradients, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.98, eps: 1e-8 }
    }
}

/// `lr_peak * min(t / warmup, sqrt(warmup / t))` for step `t >= 1`.
pub fn inverse_sqrt_lr(step: u64, lr_peak: f64, warmup: u64) -> f64 {
    let t = step.max(1) as f64;
    if warmup == 0 {
        return lr_peak / libm::sqrt(t);
    }
    let w = warmup as f64;
    lr_peak * (t / w).min(libm::sqrt(w / t))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Mat::zeros(t.rows, t.cols)).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected update.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (i, p) in store.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.grads[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = beta1 * m.data[j] + (1.0 - beta1) * gj;
                v.data[j] = beta2 * v.data[j] + (1.0 - beta2) * gj * gj;
                let mh = m.data[j] / c1;
                let vh = v.data[j] / c2;
                p.data[j] -= lr * mh / (libm::sqrt(vh) + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_landmarks() {
        assert_eq!(inverse_sqrt_lr(10_000, 5e-4, 10_000), 5e-4);
        assert!((inverse_sqrt_lr(40_000, 5e-4, 10_000) - 2.5e-4).abs() < 1e-18);
        assert!((inverse_sqrt_lr(5_000, 5e-4, 10_000) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Mat::from_vec(1, 2, alloc::vec![1.0, -1.0]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut g = Gradients::zeros_like(&store);
        g.grads[0] = Mat::from_vec(1, 2, alloc::vec![2.0, -3.0]);
        adam.update(&mut store, &g, 0.1);
        // first bias-corrected step has magnitude ~lr
        let w = store.get(id);
        assert!((w.data[0] - 0.9).abs() < 1e-6);
        assert!((w.data[1] + 0.9).abs() < 1e-6);
    }
}
