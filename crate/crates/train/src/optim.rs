use pnl_nnet::{Gradients, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::TrainError;

/// Triangular cyclic learning rate with half-cycle `step` iterations.
pub fn cyclic_lr(iteration: u64, base_lr: f64, max_lr: f64, step: u64) -> f64 {
    let step = step.max(1) as f64;
    let it = iteration as f64;
    let cycle = (1.0 + it / (2.0 * step)).floor();
    let x = (it / step - 2.0 * cycle + 1.0).abs();
    base_lr + (max_lr - base_lr) * (1.0 - x).max(0.0)
}

/// Adam moments and step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: ParamStore = params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, lr, t: 0, m: zeros.clone(), v: zeros }
    }
}

/// One Adam update at learning rate `lr`. Updated parameters are rounded to
/// the nearest `f32`, the precision of saved parameter files.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, grads: &Gradients, lr: f64) -> Result<(), TrainError> {
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(TrainError::NonFinite { iteration: state.t, what: format!("gradient of {name}") });
        }
        match params.get(name) {
            Some(p) if p.shape() == g.shape() => {}
            _ => return Err(TrainError::Config(format!("gradient {name} does not match any parameter"))),
        }
    }
    state.t += 1;
    state.lr = lr;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state.m.get_mut(name).expect("moments cover every parameter");
        let v = state.v.get_mut(name).expect("moments cover every parameter");
        for (((pi, mi), vi), gi) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + state.eps);
            *pi = (*pi - update) as f32 as f64;
        }
    }
    Ok(())
}
