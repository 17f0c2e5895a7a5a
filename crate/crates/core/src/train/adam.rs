use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moment accumulators and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay rate, applied only where the decay mask is set.
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64, weight_decay: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            weight_decay,
        }
    }
}

/// One bias-corrected Adam update in place.
///
/// Coordinates with `trainable[i] == false` keep both their value and their
/// moments. Where `decay[i]` is set, `p ← p − lr·λ·p` is applied alongside the
/// gradient step. The step counter advances even if every coordinate is frozen.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    gradient: &[f64],
    trainable: &[bool],
    decay: &[bool],
) -> Result<()> {
    let n = params.len();
    if gradient.len() != n
        || trainable.len() != n
        || decay.len() != n
        || state.m.len() != n
        || state.v.len() != n
    {
        return Err(TrainError::Config(format!(
            "adam_step shape mismatch: params {n}, gradient {}, masks {}/{}, moments {}",
            gradient.len(),
            trainable.len(),
            decay.len(),
            state.m.len()
        )));
    }
    if let Some(i) = (0..n).find(|&i| trainable[i] && !gradient[i].is_finite()) {
        return Err(TrainError::NonFiniteGradient {
            index: i,
            value: gradient[i],
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let lr = state.learning_rate;
    for i in 0..n {
        if !trainable[i] {
            continue;
        }
        let g = gradient[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let mut update = m_hat / (v_hat.sqrt() + state.epsilon);
        if decay[i] {
            update += state.weight_decay * params[i];
        }
        params[i] -= lr * update;
    }
    Ok(())
}
