use crate::model::ParameterSet;

use super::HarnessError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any state.
pub fn adam_step(params: &mut ParameterSet, grads: &ParameterSet, state: &mut AdamState, lr: f64) -> Result<(), HarnessError> {
    if let Some(path) = grads.first_non_finite() {
        return Err(HarnessError::NonFiniteGradient { path });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
    for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * gi;
            v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * gi * gi;
            let mhat = m.data[i] / c1;
            let vhat = v.data[i] / c2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
