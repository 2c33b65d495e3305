use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

/// Moment decay rates and the denominator guard; the learning rate is
/// passed per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter in [`ParamSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update using the gradients held by `params`,
    /// at learning rate `lr`. A parameter with no gradient buffer is updated
    /// as if its gradient were zero.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Length {
                op: "adam_step",
                expected: self.m.len(),
                actual: params.len(),
            });
        }
        for (i, (_, t)) in params.iter().enumerate() {
            if self.m[i].len() != t.len() {
                return Err(Error::Length {
                    op: "adam_step",
                    expected: self.m[i].len(),
                    actual: t.len(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (_, t)) in params.iter_mut().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            let grad = t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, g), m), v) in t.data_mut().iter_mut().zip(&grad).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
