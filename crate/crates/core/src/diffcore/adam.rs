use serde::{Deserialize, Serialize};

use super::tensor::{ParamGroup, ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments of one parameter plus its own step count, so
/// parameters created mid-training get correct bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.moments.get(id.0).and_then(|m| m.as_ref())
    }

    /// Drop accumulated moments, e.g. after the parameter was resampled.
    pub fn reset(&mut self, id: ParamId) {
        if let Some(m) = self.moments.get_mut(id.0) {
            *m = None;
        }
    }

    /// Restore state read back from a checkpoint.
    pub fn restore(&mut self, step: u64, moments: Vec<Option<Moments>>) {
        self.step = step;
        self.moments = moments;
    }
}

/// One bias-corrected Adam update over every learnable tensor.
///
/// `lr` maps each parameter to its learning rate. Fails, without touching
/// anything, if a learnable tensor has not received gradients since the
/// previous step.
pub fn adam_step(
    params: &mut ParamSet,
    state: &mut AdamState,
    lr: impl Fn(ParamId, ParamGroup) -> f64,
) -> Result<()> {
    let missing: Vec<String> = params
        .ids()
        .filter(|&id| params.get(id).requires_grad() && !params.is_fresh(id))
        .map(|id| params.name(id).to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGradient(missing.join(", ")));
    }

    if state.moments.len() < params.len() {
        state.moments.resize(params.len(), None);
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    for id in params.ids().collect::<Vec<_>>() {
        let rate = lr(id, params.group(id));
        let tensor = params.get_mut(id);
        let (data, grad) = tensor.data_and_grad_mut();
        let Some(grad) = grad else { continue };
        let mom = state.moments[id.0].get_or_insert_with(|| Moments {
            m: vec![0.0; data.len()],
            v: vec![0.0; data.len()],
            t: 0,
        });
        if mom.m.len() != data.len() {
            *mom = Moments {
                m: vec![0.0; data.len()],
                v: vec![0.0; data.len()],
                t: 0,
            };
        }
        mom.t += 1;
        let bc1 = 1.0 - beta1.powi(mom.t as i32);
        let bc2 = 1.0 - beta2.powi(mom.t as i32);
        for (((x, &g), m), v) in data.iter_mut().zip(grad).zip(&mut mom.m).zip(&mut mom.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *x -= rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step += 1;
    params.clear_fresh();
    Ok(())
}

/// Cosine decay from `base` to `base * floor` over `total` steps.
pub fn cosine_decay(base: f64, step: u64, total: u64, floor: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let p = (step as f64 / total as f64).min(1.0);
    let c = 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
    base * (floor + (1.0 - floor) * c)
}
