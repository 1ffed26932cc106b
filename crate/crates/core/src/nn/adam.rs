use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Optional global L2-norm gradient clip. Off by default.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Bias-corrected Adam moments for one [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParameterStore<T>) -> Self {
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.shape());
        Self {
            config,
            step: 0,
            m: store.values().iter().map(zeros).collect(),
            v: store.values().iter().map(zeros).collect(),
        }
    }

    /// Apply one update from the store's accumulated gradients, then clear them.
    pub fn step(&mut self, store: &mut ParameterStore<T>) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as f64;
        let scale = match c.clip_norm {
            Some(max) => {
                let norm: f64 = store
                    .ids()
                    .map(|id| store.grad(id).data().iter().map(|g| g.f64() * g.f64()).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let (one_b1, one_b2) = (T::c(1.0 - c.beta1), T::c(1.0 - c.beta2));
        let bc1 = T::c(1.0 - c.beta1.powf(t));
        let bc2 = T::c(1.0 - c.beta2.powf(t));
        let (lr, eps, scale) = (T::c(c.lr), T::c(c.eps), T::c(scale));
        for ((p, g), (m, v)) in store
            .values_and_grads_mut()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data_mut().iter_mut())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let grad = *g * scale;
                *m = b1 * *m + one_b1 * grad;
                *v = b2 * *v + one_b2 * grad * grad;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore<f64> {
        let mut s = ParameterStore::new(0);
        s.insert("w", Tensor::vector(vec![0.5, -0.25, 2.0]));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store();
        let before = s.values().to_vec();
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        adam.step(&mut s);
        assert_eq!(s.values(), &before[..]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store();
        let before = s.values()[0].clone();
        s.accumulate(vec![Some(Tensor::vector(vec![3.0, -0.02, 1e3]))]);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        adam.step(&mut s);
        for ((a, b), sign) in s.values()[0].data().iter().zip(before.data()).zip([1.0, -1.0, 1.0]) {
            assert!((a - b + 1e-3 * sign).abs() < 1e-9, "{a} {b}");
        }
        assert!(s.grad(s.id("w").unwrap()).data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn second_moment_is_monotone_under_repeated_gradients() {
        let mut s = store();
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        let mut prev = adam.v[0].clone();
        for _ in 0..2 {
            s.accumulate(vec![Some(Tensor::vector(vec![0.3, -1.0, 0.0]))]);
            adam.step(&mut s);
            assert!(adam.v[0].data().iter().zip(prev.data()).all(|(a, b)| a >= b));
            prev = adam.v[0].clone();
        }
        assert_eq!(adam.step, 2);
    }
}
