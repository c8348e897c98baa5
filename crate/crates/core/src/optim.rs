//! AdamW with decoupled weight decay.
//!
//! For step `t` (1-based), gradient `g`, rate `lr`:
//!
//! ```text
//! theta <- theta * (1 - lr * weight_decay)
//! m     <- beta1 * m + (1 - beta1) * g
//! v     <- beta2 * v + (1 - beta2) * g^2
//! theta <- theta - lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)
//! ```

use serde::{Deserialize, Serialize};

use crate::model::Params;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, like: &Params<T>) -> Self {
        Self {
            config,
            t: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: f64) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let decay = T::of(1.0 - lr * c.weight_decay);
        let step = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        let moments = self.m.scalars_mut().zip(self.v.scalars_mut());
        for ((theta, &g), (m, v)) in params.scalars_mut().zip(grads.scalars()).zip(moments) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *theta = *theta * decay - step * *m / ((*v * inv_bc2).sqrt() + eps);
        }
    }
}
