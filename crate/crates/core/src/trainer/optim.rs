use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::sampler::validate_batch_size;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub peak_lr: f64,
    pub floor_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Replaces the schedule with a fixed rate when set. Zero freezes the model.
    pub constant_lr: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1.82e-4,
            floor_lr: 6.8e-7,
            warmup_fraction: 0.05,
            weight_decay: 1.1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 20,
            batch_size: 32,
            seed: 7,
            constant_lr: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.floor_lr > 0.0 && self.floor_lr < self.peak_lr && self.peak_lr.is_finite()) {
            return bad(format!(
                "need 0 < floor_lr < peak_lr, got floor {} and peak {}",
                self.floor_lr, self.peak_lr
            ));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction must be in (0, 1), got {}", self.warmup_fraction));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad(format!("adam_epsilon must be positive, got {}", self.adam_epsilon));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if let Some(lr) = self.constant_lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("constant_lr must be >= 0, got {lr}"));
            }
        }
        validate_batch_size(self.batch_size)
    }
}

/// Learning rate at `step` of `total_steps`.
///
/// Ramps linearly from 0 to `peak_lr` over the first `⌈warmup_fraction·total⌉`
/// steps, reaching the peak exactly at that step, then follows half a cosine
/// down to `floor_lr`, which the last step hits exactly.
pub fn lr_at(step: usize, total_steps: usize, config: &OptimConfig) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::Domain(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    if let Some(lr) = config.constant_lr {
        return Ok(lr);
    }
    let (peak, floor) = (config.peak_lr, config.floor_lr);
    let last = total_steps - 1;
    if last == 0 {
        return Ok(peak);
    }
    let warmup_end = ((config.warmup_fraction * total_steps as f64).ceil() as usize).min(last);
    if step < warmup_end {
        return Ok(peak * step as f64 / warmup_end as f64);
    }
    if step == last {
        return Ok(floor);
    }
    let progress = (step - warmup_end) as f64 / (last - warmup_end) as f64;
    Ok(floor + (peak - floor) * 0.5 * (1.0 + (PI * progress).cos()))
}

/// First and second moment estimates, one tensor per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
///
/// `names` labels each block for error messages. Nothing is modified when any
/// gradient is non-finite.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut AdamState,
    lr: f64,
    config: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != names.len() {
        return Err(Error::Dimension(format!(
            "{} parameter blocks, {} gradients, {} moment blocks, {} names",
            params.len(),
            grads.len(),
            state.m.len(),
            names.len()
        )));
    }
    for ((p, g), name) in params.iter().zip(grads).zip(names) {
        if p.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!("non-finite gradient in block {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let shrink = 1.0 - lr * config.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mk, &gk) in m.iter_mut().zip(g) {
            *mk = b1 * *mk + (1.0 - b1) * gk;
        }
        let v = state.v[i].data_mut();
        for (vk, &gk) in v.iter_mut().zip(g) {
            *vk = b2 * *vk + (1.0 - b2) * gk * gk;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pk, &mk), &vk) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pk *= shrink;
            *pk -= lr * (mk / c1) / ((vk / c2).sqrt() + config.adam_epsilon);
        }
    }
    Ok(())
}
