use super::matrix::Matrix;
use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};
use indexmap::IndexMap;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for the trainable parameters of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: IndexMap<String, Matrix>,
    second: IndexMap<String, Matrix>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&Matrix, &Matrix)> {
        Some((self.first.get(name)?, self.second.get(name)?))
    }
}

/// One bias-corrected Adam update of every trainable parameter.
///
/// `grads` must name exactly the trainable set of `store`.
pub fn adam_step(store: &mut ParamStore, grads: &Grads, state: &mut AdamState) -> Result<()> {
    let trainable = store.trainable_names();
    if trainable.len() != grads.len() || trainable.iter().any(|n| !grads.contains_key(n)) {
        let missing: Vec<_> = trainable.iter().filter(|n| !grads.contains_key(*n)).collect();
        let extra: Vec<_> = grads.keys().filter(|n| !trainable.contains(n)).collect();
        return Err(Error::Shape(format!(
            "gradient set does not match trainable set (missing {missing:?}, extra {extra:?})"
        )));
    }
    for (name, g) in grads {
        if store.get(name)?.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient for {name} has shape {:?}, parameter {:?}",
                g.shape(),
                store.get(name)?.shape()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);

    for (name, g) in grads {
        let p = store.get_mut(name)?;
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
        for (((pi, gi), mi), vi) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
