use crate::error::{AdError, Result};
use crate::params::ParamStore;

/// Moment estimates carried between Adam steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(AdError::Shape(format!(
            "adam: params {}, grads {}, m {}, v {}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let states = store.iter().map(|(_, t)| AdamState::new(t.numel())).collect();
        Self { cfg, states }
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }

    /// Applies one update using the gradients currently stored on the parameters.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.states.len() != store.len() {
            return Err(AdError::Shape("optimizer built for a different store".into()));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, state) in ids.into_iter().zip(&mut self.states) {
            let t = store.get_mut(id);
            let grad = t.grad.take().unwrap_or_else(|| vec![0.0; t.data.len()]);
            let res = adam_step(&mut t.data, &grad, state, &self.cfg);
            t.grad = Some(grad);
            res?;
        }
        Ok(())
    }
}
