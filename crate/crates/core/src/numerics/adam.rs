//! Adam optimizer over named parameter tensors.

use crate::error::{CoreError, Result};
use crate::numerics::array::Array;

/// First/second-moment accumulators plus hyperparameters.
///
/// Moments are kept per named tensor, in the order the state was built
/// with; every update validates that order. Parameters and moments are
/// rounded to 32-bit representable values after each step so that a
/// checkpoint written in 32-bit storage is a lossless snapshot of the
/// training state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    names: Vec<String>,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl AdamState {
    /// Builds zeroed moments matching the given tensor template.
    pub fn new(lr: f64, template: &[(String, &Array)]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            names: template.iter().map(|(n, _)| n.clone()).collect(),
            m: template.iter().map(|(_, a)| a.zeros_like()).collect(),
            v: template.iter().map(|(_, a)| a.zeros_like()).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Moment tensors in template order, for checkpointing.
    pub fn moments(&self) -> (&[Array], &[Array]) {
        (&self.m, &self.v)
    }

    /// Restores internal state from a checkpoint.
    pub fn restore(&mut self, step: u64, m: Vec<Array>, v: Vec<Array>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(CoreError::InvalidArgument {
                context: "AdamState::restore: moment count mismatch".to_string(),
            });
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// Rounds through 32-bit storage; the identity for values already
/// representable in 32 bits.
#[inline]
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// One Adam update with bias correction over aligned parameter and gradient
/// tensor lists. The step count increments exactly once per call. A
/// non-finite gradient is a numeric error naming the offending tensor.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [(String, &mut Array)],
    grads: &[(String, &Array)],
) -> Result<()> {
    if params.len() != state.names.len() || grads.len() != state.names.len() {
        return Err(CoreError::InvalidArgument {
            context: "adam_step: tensor list does not match optimizer state".to_string(),
        });
    }
    for (i, name) in state.names.iter().enumerate() {
        if params[i].0 != *name || grads[i].0 != *name {
            return Err(CoreError::InvalidArgument {
                context: format!("adam_step: tensor order mismatch at {name}"),
            });
        }
        if !grads[i].1.data().iter().all(|g| g.is_finite()) {
            return Err(CoreError::NonFinite { context: format!("gradient for {name}") });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let p = params[i].1.data_mut();
        let g = grads[i].1.data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = round_f32(state.beta1 * m[j] + (1.0 - state.beta1) * gj);
            v[j] = round_f32(state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj);
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = round_f32(p[j] - state.lr * m_hat / (v_hat.sqrt() + state.eps));
        }
    }
    Ok(())
}
