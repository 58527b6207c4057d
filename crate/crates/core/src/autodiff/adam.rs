use alloc::vec::Vec;

use super::params::ParameterStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per store entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    fn ensure_init(&mut self, params: &ParameterStore<T>) {
        if self.first.len() != params.len() {
            self.first = params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            self.second = self.first.clone();
        }
    }

    /// One bias-corrected Adam update from the accumulated gradients, which
    /// are zeroed afterwards. Frozen entries keep their values.
    pub fn step(&mut self, params: &mut ParameterStore<T>, lr: f64) {
        self.ensure_init(params);
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        for i in 0..params.len() {
            let p = params.at_mut(i);
            if p.trainable {
                let m = self.first[i].data_mut();
                let v = self.second[i].data_mut();
                for (((w, &g), m), v) in p
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(p.grad.data())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    let m_hat = m.as_f64() / bc1;
                    let v_hat = v.as_f64() / bc2;
                    *w = *w - T::of(lr * m_hat / (libm::sqrt(v_hat) + eps));
                }
            }
            p.grad.data_mut().fill(T::zero());
        }
    }
}
