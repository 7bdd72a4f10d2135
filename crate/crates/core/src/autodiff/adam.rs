use super::params::ParamStore;
use crate::error::{HvisError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(HvisError::Parameter(format!("learning rate must be > 0, got {learning_rate}")));
        }
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Ok(AdamState {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        })
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if grads.len() != store.len() || state.first_moment.len() != store.len() {
        return Err(HvisError::dim(
            "adam_step",
            format!("{} parameters, {} gradients, {} moment slots", store.len(), grads.len(), state.first_moment.len()),
        ));
    }
    for (id, g) in store.ids().zip(grads) {
        let n = store.get(id).numel();
        if g.len() != n || state.first_moment[id.index()].len() != n {
            return Err(HvisError::dim(
                "adam_step",
                format!("parameter {} has {n} values, gradient has {}", store.name(id), g.len()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(HvisError::Training(format!("non-finite gradient for parameter {}", store.name(id))));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
        let m = &mut state.first_moment[id.index()];
        let v = &mut state.second_moment[id.index()];
        let p = store.get_mut(id).values_mut();
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
