use serde::{Deserialize, Serialize};

use crate::gemm::Real;
use crate::model::UNet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moments share the model layout.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    pub steps: u64,
    m: UNet<T>,
    v: UNet<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &UNet<T>, config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut UNet<T>, grads: &UNet<T>) {
        self.steps += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        let f = |x: f64| T::from(x).expect("finite");
        let (b1, b2, eps) = (f(c.beta1), f(c.beta2), f(c.eps));
        let step = f(c.lr / bc1);
        let sq = f(bc2.sqrt());
        let params = model.params_mut().into_iter();
        let moments = self.m.params_mut().into_iter().zip(self.v.params_mut());
        for ((p, g), (m, v)) in params.zip(grads.params()).zip(moments) {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p = *p - step * *m / ((*v).sqrt() / sq + eps);
            }
        }
    }
}
