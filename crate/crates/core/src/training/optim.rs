use super::{Gradients, Model};

/// Lower clamp applied to every τ after an update.
pub const TAU_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter group, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.groups().iter().map(|g| vec![0.0; g.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam step. Returns `false` (and leaves everything
/// untouched) when a gradient entry is non-finite.
pub fn adam_update(model: &mut Model, grads: &Gradients, state: &mut AdamState, config: &AdamConfig, learning_rate: f64) -> bool {
    if !grads.is_finite() {
        return false;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (gi, (param, grad)) in model.groups_mut().into_iter().zip(grads.groups()).enumerate() {
        let (m, v) = (&mut state.m[gi], &mut state.v[gi]);
        for j in 0..param.len() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * grad[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * grad[j] * grad[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            param[j] -= learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    clamp_tau(model);
    true
}

/// Plain gradient descent; same skip rule as [`adam_update`].
pub fn sgd_update(model: &mut Model, grads: &Gradients, learning_rate: f64) -> bool {
    if !grads.is_finite() {
        return false;
    }
    for (param, grad) in model.groups_mut().into_iter().zip(grads.groups()) {
        for (p, g) in param.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
    }
    clamp_tau(model);
    true
}

fn clamp_tau(model: &mut Model) {
    for t in &mut model.params.tau {
        *t = t.max(TAU_FLOOR);
    }
}

/// Rescales `grads` so its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}
