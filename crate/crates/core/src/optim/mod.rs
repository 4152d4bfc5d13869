//! Weight-update rules applied locally by each trainer.
//!
//! Only weights ever leave a trainer, so optimizer state (Adam moments,
//! step counters) is trainer-local and never serialized onto the wire.

mod schedule;

pub use schedule::{lr_at, LrSchedule};

use thiserror::Error;

use crate::nn::{GradSet, ParamSet};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("params have length {params} but grads have length {grads}")]
    LengthMismatch { params: usize, grads: usize },
    #[error("central epoch {epoch} outside every schedule range")]
    EpochOutOfRange { epoch: u32 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Adam hyperparameters; defaults are the standard β1=0.9, β2=0.999, ε=1e-8.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Optimizer state owned by one trainer.
#[derive(Clone, Debug)]
pub enum OptimizerState {
    Sgd,
    Adam { params: AdamParams, m: Vec<f64>, v: Vec<f64>, step: u64 },
}

impl OptimizerState {
    pub fn sgd() -> Self {
        OptimizerState::Sgd
    }

    pub fn adam(dim: usize, params: AdamParams) -> Self {
        OptimizerState::Adam { params, m: vec![0.0; dim], v: vec![0.0; dim], step: 0 }
    }

    /// Zeroes Adam moments and the step counter (no-op for SGD).
    pub fn reset_moments(&mut self) {
        if let OptimizerState::Adam { m, v, step, .. } = self {
            m.iter_mut().for_each(|x| *x = 0.0);
            v.iter_mut().for_each(|x| *x = 0.0);
            *step = 0;
        }
    }
}

/// Plain SGD: `out[i] = params[i] - alpha * grads[i]`.
pub fn sgd_step(params: &ParamSet, grads: &GradSet, alpha: f64) -> Result<ParamSet, OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::LengthMismatch { params: params.len(), grads: grads.len() });
    }
    let values = params
        .values()
        .iter()
        .zip(grads.values())
        .map(|(&w, &g)| w - alpha * g)
        .collect();
    Ok(ParamSet::new(values))
}

/// One Adam update with bias correction; increments the step counter.
pub fn adam_step(
    state: &OptimizerState,
    params: &ParamSet,
    grads: &GradSet,
    alpha: f64,
) -> Result<(ParamSet, OptimizerState), OptimError> {
    let OptimizerState::Adam { params: hp, m, v, step } = state else {
        return Err(OptimError::InvalidSchedule("adam_step called on non-Adam state".into()));
    };
    if params.len() != grads.len() || params.len() != m.len() {
        return Err(OptimError::LengthMismatch { params: params.len(), grads: grads.len() });
    }
    let t = step + 1;
    let mut new_m = m.clone();
    let mut new_v = v.clone();
    let mut out = params.values().to_vec();
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..out.len() {
        let g = grads.values()[i];
        new_m[i] = hp.beta1 * new_m[i] + (1.0 - hp.beta1) * g;
        new_v[i] = hp.beta2 * new_v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = new_m[i] / bc1;
        let v_hat = new_v[i] / bc2;
        out[i] -= alpha * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
    Ok((
        ParamSet::new(out),
        OptimizerState::Adam { params: *hp, m: new_m, v: new_v, step: t },
    ))
}
