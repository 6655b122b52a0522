use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Real};
use crate::error::{Error, Result};

/// Adam hyper-parameters with cosine learning-rate decay to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub initial_lr: f64,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warmup steps before the cosine decay; 0 disables warmup.
    pub warmup_steps: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            initial_lr: 5e-4,
            total_steps: 20_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
            clip_norm: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || !self.initial_lr.is_finite() {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Learning rate at a 1-based step.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return self.initial_lr * step as f64 / self.warmup_steps as f64;
        }
        let done = step.saturating_sub(self.warmup_steps) as f64;
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = (done / span).min(1.0);
        0.5 * self.initial_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// One Adam update of every parameter that has a gradient. `step` is 1-based.
pub fn adam_step<F: Real>(store: &mut ParamStore<F>, grads: &Gradients<F>, cfg: &OptimConfig, step: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::Config("Adam step counter is 1-based".into()));
    }
    if grads.len() != store.len() {
        return Err(Error::Shape("gradients do not match parameter store".into()));
    }
    let lr = cfg.lr_at(step);
    let clip = match cfg.clip_norm {
        Some(max) => {
            let norm = grads.global_norm();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let (b1, b2) = (F::from_f64(cfg.beta1), F::from_f64(cfg.beta2));
    let (ob1, ob2) = (F::from_f64(1.0 - cfg.beta1), F::from_f64(1.0 - cfg.beta2));
    let clip = F::from_f64(clip);
    let step_size = F::from_f64(lr / bc1);
    let inv_bc2_sqrt = F::from_f64(1.0 / bc2.sqrt());
    let eps = F::from_f64(cfg.eps);

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let Some(g) = grads.get(id) else { continue };
        let p = store.param_mut(id);
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!("gradient shape mismatch for {}", p.name)));
        }
        let gd = g.data();
        let m = p.first_moment.data_mut();
        for (mi, gi) in m.iter_mut().zip(gd) {
            *mi = b1 * *mi + ob1 * (*gi * clip);
        }
        let v = p.second_moment.data_mut();
        for (vi, gi) in v.iter_mut().zip(gd) {
            let gc = *gi * clip;
            *vi = b2 * *vi + ob2 * gc * gc;
        }
        let (value, m, v) = (&mut p.value, &p.first_moment, &p.second_moment);
        for ((w, mi), vi) in value.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            *w -= step_size * *mi / (vi.sqrt() * inv_bc2_sqrt + eps);
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn single(value: f32) -> (ParamStore<f32>, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(value));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut s, id) = single(1.5);
        let grads = Gradients::from_vec(vec![Some(Tensor::scalar(0.0))]);
        let cfg = OptimConfig::default();
        for step in 1..=5 {
            adam_step(&mut s, &grads, &cfg, step).unwrap();
        }
        assert_eq!(s.value(id).item(), 1.5);
    }

    #[test]
    fn cosine_endpoint_is_zero() {
        let cfg = OptimConfig {
            total_steps: 1000,
            ..Default::default()
        };
        assert!(cfg.lr_at(1000).abs() < 1e-15);
        assert!((cfg.lr_at(500) - 2.5e-4).abs() < 1e-12);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = single(0.0);
        let grads = Gradients::from_vec(vec![Some(Tensor::scalar(1.0))]);
        let cfg = OptimConfig {
            total_steps: 100,
            ..Default::default()
        };
        let lr = adam_step(&mut s, &grads, &cfg, 1).unwrap();
        // bias-corrected moments are both exactly 1 after one step
        let expected = -lr / (1.0 + cfg.eps);
        assert!((s.value(id).item() as f64 - expected).abs() < 1e-9);
        assert!((lr - 5e-4).abs() < 1e-6);
    }

    #[test]
    fn rejects_step_zero() {
        let (mut s, _) = single(0.0);
        let grads = Gradients::from_vec(vec![None]);
        assert!(adam_step(&mut s, &grads, &OptimConfig::default(), 0).is_err());
    }
}
