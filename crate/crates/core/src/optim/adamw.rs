use crate::{Error, Result};

/// Per-tensor AdamW state. Weight decay is decoupled: parameters are first
/// scaled by `1 − lr·wd`, then the bias-corrected Adam step is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamWState, lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::DimensionMismatch { expected: params.len(), got: grads.len() });
    }
    if !(lr >= 0.0) {
        return Err(Error::invalid("learning rate must be non-negative"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    let decay = 1.0 - lr * weight_decay;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *p *= decay;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}
