use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore, Scalar};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Per-parameter optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub hyper: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, hyper: AdamConfig) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            hyper,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Scalar>(param: &mut [T], grad: &[T], state: &mut AdamState<T>) -> Result<(), NumericError> {
    if param.len() != grad.len() || param.len() != state.first_moment.len() {
        return Err(NumericError::ShapeMismatch {
            op: "adam_step",
            left: vec![param.len()],
            right: vec![grad.len(), state.first_moment.len()],
        });
    }
    state.step_count += 1;
    let h = state.hyper;
    let t = state.step_count as i32;
    let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - h.beta1), T::lit(1.0 - h.beta2));
    let correction1 = T::lit(1.0 / (1.0 - h.beta1.powi(t)));
    let correction2 = T::lit(1.0 / (1.0 - h.beta2.powi(t)));
    let lr = T::lit(h.learning_rate);
    let eps = T::lit(h.epsilon);
    for (((p, g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + one_b1 * *g;
        *v = b2 * *v + one_b2 * *g * *g;
        let m_hat = *m * correction1;
        let v_hat = *v * correction2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamStore`].
///
/// Tensors without an accumulated gradient are skipped, so their step counts
/// only advance when they actually receive an update.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, hyper: AdamConfig) -> Self {
        Self {
            states: store.iter().map(|(_, t)| AdamState::new(t.len(), hyper)).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<(), NumericError> {
        for (tensor, state) in store.tensors_mut().zip(&mut self.states) {
            let (values, grad) = tensor.values_and_grad();
            if let Some(grad) = grad {
                adam_step(values, grad, state)?;
            }
        }
        Ok(())
    }

    pub fn states(&self) -> &[AdamState<T>] {
        &self.states
    }
}
