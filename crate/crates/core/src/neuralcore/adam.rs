use super::mlp::{Gradients, MlpModel};
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl AdamState {
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(model: &MlpModel) -> Self {
        Self::with_hyperparameters(model, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(model: &MlpModel, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

fn shapes_match(model: &MlpModel, g: &Gradients) -> bool {
    g.weights.len() == model.layers().len()
        && g.biases.len() == model.layers().len()
        && model
            .layers()
            .iter()
            .zip(g.weights.iter().zip(&g.biases))
            .all(|(l, (w, b))| l.weights.dim() == w.dim() && l.bias.dim() == b.dim())
}

/// One Adam update of `model` in place.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if !shapes_match(model, grads) || !shapes_match(model, &state.first) {
        return Err(Error::Shape("gradients or optimizer state do not match the model".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Validation(format!("learning rate must be positive, got {lr}")));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        ndarray::Zip::from(&mut layer.weights)
            .and(&grads.weights[i])
            .and(&mut state.first.weights[i])
            .and(&mut state.second.weights[i])
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.bias)
            .and(&grads.biases[i])
            .and(&mut state.first.biases[i])
            .and(&mut state.second.biases[i])
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}
