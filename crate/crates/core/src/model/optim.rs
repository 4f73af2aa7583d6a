use serde::{Deserialize, Serialize};

use super::layers::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers follow the order of the
/// parameter list they were created from.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub(crate) t: u64,
    pub(crate) m: Vec<Vec<f32>>,
    pub(crate) v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &[&Param], hyper: AdamHyper) -> Self {
        Self {
            hyper,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Updates taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Param>, lr: f32) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let c1 = 1.0 - (beta1 as f64).powi(self.t as i32);
        let c2 = 1.0 - (beta2 as f64).powi(self.t as i32);
        let step = (lr as f64 * c2.sqrt() / c1) as f32;
        // Epsilon is applied to the bias-corrected second moment.
        let eps_hat = (eps as f64 * c2.sqrt()) as f32;
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            if p.len() != m.len() {
                return Err(Error::Shape("parameter size changed under the optimizer".into()));
            }
            for i in 0..m.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                p.value[i] -= step * m[i] / (v[i].sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}
