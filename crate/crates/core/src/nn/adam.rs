use serde::{Deserialize, Serialize};

use super::params::{ParamStore, Precision};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Step decay: `base_lr · decay^(epoch / every)`, epochs counted from 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            decay: 0.5,
            every: 20,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay.powi((epoch / self.every.max(1)) as i32)
    }
}

/// Epoch/crop/optimizer settings shared by the trainers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Square crop side; samples smaller than this are used whole.
    pub crop: usize,
    pub seed: u64,
    pub lr: LrSchedule,
    pub adam: AdamConfig,
    /// Parameter storage precision during training.
    pub precision: Precision,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 40,
            crop: 64,
            seed: 0,
            lr: LrSchedule::default(),
            adam: AdamConfig::default(),
            precision: Precision::F64,
        }
    }
}

/// Random `crop × crop` window (clipped to the image) as `(top, left, h, w)`.
pub fn random_crop(h: usize, w: usize, crop: usize, rng: &mut impl rand::Rng) -> (usize, usize, usize, usize) {
    let ch = crop.min(h).max(1);
    let cw = crop.min(w).max(1);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    (top, left, ch, cw)
}

/// One bias-corrected Adam update over every parameter in the store. The
/// store is left untouched if any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    if let Some(p) = store.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFiniteGradient(p.name.clone()));
    }
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for p in store.params_mut() {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.m[i] / c1;
            let v_hat = p.v[i] / c2;
            p.value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    store.quantize();
    if let Some(p) = store.iter().find(|p| p.value.iter().any(|v| !v.is_finite())) {
        return Err(Error::param(format!("parameter `{}` became non-finite", p.name)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = ParamStore::new();
        s.add("a", &[3], vec![1.0, -2.0, 0.5]).unwrap();
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.flat_values(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps)
        for g in [0.3, -5.0, 1e3] {
            let mut s = ParamStore::new();
            let id = s.add("x", &[1], vec![2.0]).unwrap();
            s.grad_mut(id)[0] = g;
            adam_step(&mut s, &AdamConfig::default()).unwrap();
            let moved = 2.0 - s.value(id)[0];
            let expected = 1e-3 * g / (g.abs() + 1e-8);
            assert!((moved - expected).abs() < 1e-12, "{moved} vs {expected}");
            assert!((moved.abs() - 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = ParamStore::new();
        s.add("ok", &[1], vec![0.0]).unwrap();
        let id = s.add("enc.conv0.weight", &[2], vec![0.0, 0.0]).unwrap();
        s.grad_mut(id)[1] = f64::NAN;
        let err = adam_step(&mut s, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("enc.conv0.weight"));
        assert_eq!(s.flat_values(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn schedule_halves_every_twenty_epochs() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 0.001);
        assert_eq!(s.lr_at(19), 0.001);
        assert_eq!(s.lr_at(20), 0.0005);
        assert_eq!(s.lr_at(40), 0.00025);
    }
}
