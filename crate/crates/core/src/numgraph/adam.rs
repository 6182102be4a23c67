use std::collections::BTreeMap;

use super::{GraphError, ParamStore, Tensor};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            config,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    params: &mut Tensor<T>,
    grads: &Tensor<T>,
) -> Result<(), GraphError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(GraphError::BadTensor(format!(
            "adam: params {:?}, grads {:?}, state {}",
            params.shape(),
            grads.shape(),
            state.m.len()
        )));
    }
    if !grads.is_finite() {
        return Err(GraphError::NonFiniteGradient("adam step".into()));
    }
    let c = state.config;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let (lr, eps) = (T::lit(c.lr), T::lit(c.epsilon));
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for (((p, &g), m), v) in params
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a named subset of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    config: AdamConfig,
    states: BTreeMap<String, AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// Apply one update for every name in `grads`.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<(), GraphError> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(GraphError::NonFiniteGradient(name.clone()));
            }
        }
        for (name, g) in grads {
            let p = store
                .get_mut(name)
                .ok_or_else(|| GraphError::UnknownName(name.clone()))?;
            let config = self.config;
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamState::new(p.len(), config));
            adam_step(state, p, g)?;
        }
        Ok(())
    }
}
