use crate::error::{config_err, Result};
use crate::nn::{Gradients, ParamStore};
use crate::tensor::Real;

/// Step-wise learning-rate drop: `lr · factor^(step / every)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrDecay {
    pub every: usize,
    pub factor: Real,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub decay: Option<LrDecay>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<Real>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay: None, clip_norm: Some(5.0) }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config_err!("learning rate must be non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("Adam betas must lie in [0, 1)"));
        }
        if let Some(d) = self.decay {
            if d.every == 0 || d.factor <= 0.0 || d.factor.is_nan() {
                return Err(config_err!("learning-rate decay needs a positive period and factor"));
            }
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0 || c.is_nan()) {
            return Err(config_err!("clip norm must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> Real {
        match self.decay {
            Some(d) => self.lr * d.factor.powi((step / d.every) as i32),
            None => self.lr,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: usize,
    pub m: Gradients,
    pub v: Gradients,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self { config, step: 0, m: Gradients::zeros_like(store), v: Gradients::zeros_like(store) }
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients) -> Real {
        let norm = grads.global_norm();
        let clip = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let lr = self.config.lr_at(self.step);
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            for (m, &g) in m.iter_mut().zip(g) {
                *m = beta1 * *m + (1.0 - beta1) * g * clip;
            }
            let v = self.v.get_mut(id);
            for (v, &g) in v.iter_mut().zip(g) {
                let g = g * clip;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
            }
            let (m, v) = (self.m.get(id), self.v.get(id));
            for ((p, &m), &v) in store.data_mut(id).iter_mut().zip(m).zip(v) {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
        norm
    }
}
