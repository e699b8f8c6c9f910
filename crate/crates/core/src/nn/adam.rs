use serde::{Deserialize, Serialize};

use super::TensorSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.9, eps: 1e-8 }
    }
}

/// Moment estimates and step count, everything needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: TensorSet,
    pub second: TensorSet,
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &TensorSet) -> Self {
        let zeros = |set: &TensorSet| {
            let mut out = TensorSet::new();
            for (name, t) in set.iter() {
                out.add(name, Tensor::zeros(t.shape().to_vec()));
            }
            out
        };
        Self { config, state: AdamState { step: 0, first: zeros(params), second: zeros(params) } }
    }

    pub fn step(&mut self, params: &mut TensorSet, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let firsts = self.state.first.values_mut();
        let seconds = self.state.second.values_mut();
        for (i, (p, g)) in params.values_mut().iter_mut().zip(grads).enumerate() {
            let m = firsts[i].data_mut();
            let v = seconds[i].data_mut();
            for (j, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * d;
                v[j] = beta2 * v[j] + (1.0 - beta2) * d * d;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut params = TensorSet::new();
        params.add("w", Tensor::new([2], vec![1.0, -1.0]));
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, &[Tensor::new([2], vec![0.5, -3.0])]);
        let w = params.values()[0].data();
        assert!((w[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert!((w[1] - (-1.0 + 1e-4)).abs() < 1e-10);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = TensorSet::new();
        params.add("w", Tensor::new([1], vec![3.0]));
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &params);
        for _ in 0..2000 {
            let w = params.values()[0].data()[0];
            adam.step(&mut params, &[Tensor::new([1], vec![2.0 * (w - 1.0)])]);
        }
        assert!((params.values()[0].data()[0] - 1.0).abs() < 1e-2);
    }
}
