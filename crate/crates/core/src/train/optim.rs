//! Adam and the speed-of-change learning-rate rule.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `shapes`, with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let zeros: Vec<Vec<f64>> = sizes.into_iter().map(|n| alloc::vec![0.0; n]).collect();
        Self { v: zeros.clone(), m: zeros, step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update, `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.numel() {
            return Err(Error::Contract(format!("adam: shape mismatch at parameter {i}")));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(state.beta1, t);
    let bc2 = 1.0 - libm::pow(state.beta2, t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (math::sqrt(vhat) + eps);
        }
    }
    Ok(())
}

/// Learning rate driven by how fast the global loss changes: it shrinks by
/// 0.99 when the speed `|loss(t) − loss(t−1)|` grows and grows by 1/0.99
/// otherwise, within `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrState {
    pub lr: f64,
    pub min: f64,
    pub max: f64,
    pub prev_loss: Option<f64>,
    pub prev_speed: Option<f64>,
}

pub const LR_DECAY: f64 = 0.99;

impl LrState {
    pub fn new(lr0: f64, min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min <= lr0 && lr0 <= max) {
            return Err(Error::Contract(format!("learning rates must satisfy 0 < min <= lr0 <= max, got {min}, {lr0}, {max}")));
        }
        Ok(Self { lr: lr0, min, max, prev_loss: None, prev_speed: None })
    }

    /// Records an epoch loss and adapts once two speeds are known.
    pub fn observe(&mut self, loss: f64) {
        if let Some(prev) = self.prev_loss {
            self.apply_speed(libm::fabs(loss - prev));
        }
        self.prev_loss = Some(loss);
    }

    /// Adapts to a new speed of change of the loss.
    pub fn apply_speed(&mut self, speed: f64) {
        if let Some(prev) = self.prev_speed {
            let lr = if speed > prev { self.lr * LR_DECAY } else { self.lr / LR_DECAY };
            self.lr = lr.clamp(self.min, self.max);
        }
        self.prev_speed = Some(speed);
    }
}
