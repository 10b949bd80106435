//! Adadelta.
//!
//! ```text
//! E[g²]  ← ρ E[g²] + (1 - ρ) g²
//! Δx     = -(√(E[Δx²] + ε) / √(E[g²] + ε)) g
//! E[Δx²] ← ρ E[Δx²] + (1 - ρ) Δx²
//! x      ← x + lr Δx
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{same_layout, ParamBuffers};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            lr: 1.0,
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && (0.0..1.0).contains(&self.rho) && self.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adadelta settings {self:?}")));
        }
        Ok(())
    }
}

/// Running averages shaped like the parameter set they optimize.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState<P> {
    pub sq_grad: P,
    pub sq_update: P,
}

impl<P: ParamBuffers + Clone> AdadeltaState<P> {
    /// Zeroed accumulators with the layout of `like`.
    pub fn new(like: &P) -> Self {
        let mut zero = like.clone();
        zero.fill(0.0);
        AdadeltaState {
            sq_grad: zero.clone(),
            sq_update: zero,
        }
    }

    /// Advances the accumulators and returns the update `lr * Δx`.
    pub fn update(&mut self, grads: &P, config: &AdadeltaConfig) -> Result<P> {
        if !same_layout(&self.sq_grad, grads) {
            return Err(Error::shape("adadelta", "state layout", "gradient layout"));
        }
        let AdadeltaConfig { lr, rho, eps } = *config;
        let mut delta = grads.clone();
        for ((eg, ex), (d, g)) in self
            .sq_grad
            .buffers_mut()
            .into_iter()
            .zip(self.sq_update.buffers_mut())
            .zip(delta.buffers_mut().into_iter().zip(grads.buffers()))
        {
            for j in 0..g.len() {
                eg[j] = rho * eg[j] + (1.0 - rho) * g[j] * g[j];
                let dx = -((ex[j] + eps).sqrt() / (eg[j] + eps).sqrt()) * g[j];
                ex[j] = rho * ex[j] + (1.0 - rho) * dx * dx;
                d[j] = lr * dx;
            }
        }
        Ok(delta)
    }
}
