use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with coupled (L2) weight decay: the decay term is added to the
/// gradient before the moment updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub amsgrad: bool,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            amsgrad: false,
            weight_decay: 5e-4,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam configuration {self:?}")))
        }
    }
}

/// Moment estimates for one parameter tensor. `v_max` stays empty unless
/// AMSGrad is on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Vec<f64>,
}

impl AdamSlot {
    pub fn zeros(len: usize, amsgrad: bool) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            v_max: if amsgrad { vec![0.0; len] } else { Vec::new() },
        }
    }
}

/// One bias-corrected Adam update of `params` at step `t` (1-based).
pub fn adam_step(params: &mut [f64], grads: &[f64], slot: &mut AdamSlot, cfg: &AdamConfig, t: u64) {
    assert!(t >= 1, "Adam steps are 1-based");
    assert_eq!(params.len(), grads.len());
    if slot.m.len() != params.len() {
        *slot = AdamSlot::zeros(params.len(), cfg.amsgrad);
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i] + cfg.weight_decay * params[i];
        slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
        slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
        let v = if cfg.amsgrad {
            slot.v_max[i] = slot.v_max[i].max(slot.v[i]);
            slot.v_max[i]
        } else {
            slot.v[i]
        };
        let denom = (v / bc2).sqrt() + cfg.eps;
        params[i] -= cfg.lr * (slot.m[i] / bc1) / denom;
    }
}

/// Optimizer state over a fixed, ordered list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub slots: Vec<(String, AdamSlot)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            slots: Vec::new(),
        })
    }

    /// Advances the step counter and updates every trainable tensor of
    /// `model`.
    pub fn step(&mut self, model: &mut super::Detector) {
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let mut idx = 0;
        let slots = &mut self.slots;
        model.for_each_trainable(|name, values, grads| {
            if idx == slots.len() {
                slots.push((name.to_string(), AdamSlot::zeros(values.len(), cfg.amsgrad)));
            }
            debug_assert_eq!(slots[idx].0, name);
            adam_step(values, grads, &mut slots[idx].1, &cfg, t);
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Adam written out longhand.
    fn scalar_trace(mut x: f64, grads: &[f64], cfg: &AdamConfig) -> Vec<f64> {
        let (mut m, mut v) = (0.0, 0.0);
        let mut out = Vec::new();
        for (k, &g0) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            let g = g0 + cfg.weight_decay * x;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mhat = m / (1.0 - cfg.beta1.powi(t));
            let vhat = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = [0.0];
        let mut slot = AdamSlot::default();
        adam_step(&mut p, &[1.0], &mut slot, &cfg, 1);
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        assert!((p[0] + 2e-4 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = [0.37, -1.5];
        let mut slot = AdamSlot::default();
        adam_step(&mut p, &[0.0, 0.0], &mut slot, &cfg, 1);
        assert_eq!(p, [0.37, -1.5]);
    }

    #[test]
    fn matches_scalar_trace() {
        let cfg = AdamConfig::default();
        let grads = [0.3, 0.3, -0.1, 2.0];
        let expected = scalar_trace(0.5, &grads, &cfg);
        let mut p = [0.5];
        let mut slot = AdamSlot::default();
        for (k, g) in grads.iter().enumerate() {
            adam_step(&mut p, &[*g], &mut slot, &cfg, k as u64 + 1);
            assert_eq!(p[0], expected[k]);
        }
    }

    #[test]
    fn amsgrad_keeps_running_max() {
        let cfg = AdamConfig {
            amsgrad: true,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = [0.0];
        let mut slot = AdamSlot::zeros(1, true);
        adam_step(&mut p, &[5.0], &mut slot, &cfg, 1);
        let peak = slot.v_max[0];
        adam_step(&mut p, &[0.0], &mut slot, &cfg, 2);
        assert_eq!(slot.v_max[0], peak);
        assert!(slot.v[0] < peak);
        let plain = AdamConfig { amsgrad: false, ..cfg };
        let mut s2 = AdamSlot::zeros(1, false);
        let mut q = [0.0];
        adam_step(&mut q, &[5.0], &mut s2, &plain, 1);
        assert!(s2.v_max.is_empty());
    }

    #[test]
    fn rejects_bad_config() {
        let bad = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(Adam::new(bad).is_err());
    }
}
