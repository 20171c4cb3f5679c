//! Adam with bias correction and the cosine learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{ParamSet, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moments plus the global step counter.
#[derive(Default)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update over every parameter in `params`.
/// Gradients must cover the full set; a missing entry is an error.
pub fn adam_step(
    params: &mut ParamSet<f32>,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut AdamState,
    lr: f32,
    cfg: &AdamConfig,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::invalid("adam_step", "learning rate must be positive"));
    }
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        if !grads.contains_key(name) {
            return Err(Error::MissingGrad(name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let corr1 = 1.0 - (cfg.beta1 as f64).powi(state.t as i32);
    let corr2 = 1.0 - (cfg.beta2 as f64).powi(state.t as i32);
    let _ = t;
    for name in &names {
        let p = params.get(name)?;
        let g = &grads[name];
        if g.dims() != p.dims() {
            return Err(Error::shape("adam_step", format!("gradient {:?} vs parameter {:?} for '{name}'", g.dims(), p.dims())));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
        let mut new = p.data().to_vec();
        for i in 0..new.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] as f64 / corr1;
            let vhat = v[i] as f64 / corr2;
            new[i] -= (lr as f64 * mhat / (vhat.sqrt() + cfg.eps as f64)) as f32;
        }
        let dims = p.dims().to_vec();
        params.set(name, Tensor::from_vec(&dims, new)?)?;
    }
    Ok(())
}

/// Cosine annealing: lr_min + ½(lr_init − lr_min)(1 + cos(π·step/total)).
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("cosine_lr", "total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::invalid("cosine_lr", format!("step {step} exceeds total {total_steps}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_init - lr_min) * (1.0 + phase.cos()))
}
