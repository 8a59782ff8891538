//! Adam with optional global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the joint gradient when its L2 norm exceeds this; 0 disables.
    pub max_grad_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments per parameter slot; `None` until touched.
    pub moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            moments: vec![None; store.len()],
        }
    }

    /// Applies one update. Frozen parameters are skipped even if a gradient
    /// for them is supplied.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> f64 {
        let norm = grads
            .iter()
            .filter(|(id, _)| !store.get(*id).frozen)
            .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let clip = if self.config.max_grad_norm > 0.0 && norm > self.config.max_grad_norm {
            self.config.max_grad_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, g) in grads {
            if store.get(*id).frozen {
                continue;
            }
            let value = store.value_mut(*id);
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (Tensor::zeros(g.rows(), g.cols()), Tensor::zeros(g.rows(), g.cols())));
            for (((p, m), v), &gi) in value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let gi = gi * clip;
                *m = c.beta1 * *m + (1.0 - c.beta1) * gi;
                *v = c.beta2 * *v + (1.0 - c.beta2) * gi * gi;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0), false);
        let mut opt = Adam::new(
            AdamConfig {
                max_grad_norm: 0.0,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..2000 {
            let g = Tensor::scalar(2.0 * store.value(x).data()[0]);
            opt.update(&mut store, &[(x, g)], 0.01);
        }
        assert!(store.value(x).data()[0].abs() < 1e-2);
    }

    #[test]
    fn frozen_parameters_never_move() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0), true);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.update(&mut store, &[(x, Tensor::scalar(1.0))], 0.1);
        assert_eq!(store.value(x).data()[0], 3.0);
    }
}
