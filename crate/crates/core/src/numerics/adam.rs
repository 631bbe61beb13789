use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Adam hyperparameters with a step-wise learning-rate schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            milestones: vec![1000, 1500],
            decay: 0.1,
        }
    }
}

impl AdamConfig {
    /// Learning rate in effect during the zero-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.learning_rate * self.decay.powi(passed as i32)
    }
}

/// Moment estimates and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store
            .iter()
            .map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    config: &AdamConfig,
    epoch: usize,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moments",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for &id in &ids {
        let (p, g) = (store.get(id), grads.get(id));
        if p.shape() != g.shape() || state.m[id.0].shape() != p.shape() {
            return Err(Error::Shape(format!(
                "adam: parameter `{}` is {:?} but its gradient is {:?}",
                store.name(id),
                p.shape(),
                g.shape()
            )));
        }
    }

    state.t += 1;
    let lr = config.learning_rate_at(epoch);
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for id in ids {
        let g = grads.get(id).data();
        let m = state.m[id.0].data_mut();
        let v = state.v[id.0].data_mut();
        let p = store.get_mut(id).data_mut();
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Matrix::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap());
        let before = store.clone();
        let grads = Gradients::zeros_like(&store);
        let mut state = AdamState::new(&store);
        for epoch in 0..5 {
            adam_step(
                &mut store,
                &grads,
                &mut state,
                &AdamConfig::default(),
                epoch,
            )
            .unwrap();
        }
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let mut store = scalar_store(1.0);
        let grads = Gradients::from_matrices(vec![Matrix::scalar(1.0)]);
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &grads, &mut state, &AdamConfig::default(), 0).unwrap();
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((store.get(super::super::ParamId(0)).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn schedule_drops_at_milestones() {
        let cfg = AdamConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 1e-4);
        assert_eq!(cfg.learning_rate_at(999), 1e-4);
        assert!((cfg.learning_rate_at(1000) - 1e-5).abs() < 1e-20);
        assert!((cfg.learning_rate_at(1499) - 1e-5).abs() < 1e-20);
        assert!((cfg.learning_rate_at(1500) - 1e-6).abs() < 1e-21);
        assert!((cfg.learning_rate_at(1999) - 1e-6).abs() < 1e-21);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut store = scalar_store(1.0);
        let grads = Gradients::from_matrices(vec![Matrix::zeros(2, 1)]);
        let mut state = AdamState::new(&store);
        assert!(adam_step(&mut store, &grads, &mut state, &AdamConfig::default(), 0).is_err());
    }

    #[test]
    fn identical_inputs_give_identical_updates() {
        let run = || {
            let mut store = scalar_store(0.3);
            let mut state = AdamState::new(&store);
            for k in 0..10 {
                let grads = Gradients::from_matrices(vec![Matrix::scalar((k as f64).sin())]);
                adam_step(&mut store, &grads, &mut state, &AdamConfig::default(), k).unwrap();
            }
            store.get(super::super::ParamId(0)).item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
