use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numerics::ParamStore;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, `θ ← θ − lr·m̂/(√v̂ + ε)`.
///
/// A non-finite gradient entry aborts before anything is modified.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return Err(TrainError::Config("parameter, gradient and moment names differ".into()));
    }
    for (name, g) in grads.iter() {
        if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: name.to_string(),
                index,
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let g = grads.get(name).expect("layout checked").data();
        let m = state.m.get_mut(name).expect("layout checked").data_mut();
        let v = state.v.get_mut(name).expect("layout checked").data_mut();
        let p = params.get_mut(name).expect("layout checked").data_mut();
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
