//! Gaussian posterior with reparameterized sampling, closed-form KL to the
//! standard normal, and the PI controller that tunes the KL weight toward a
//! target instead of annealing it blindly (cost annealing is kept for the
//! ablation path).

use crate::error::{CoreError, Result};
use crate::numerics::array::Array;
use crate::numerics::net::Linear;
use crate::numerics::rng::RngStream;
use crate::numerics::{axpy, dot};

/// Diagonal Gaussian posterior. The scale is stored as log sigma and
/// exponentiated on use, so sigma is positive by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(CoreError::ShapeMismatch {
                context: "GaussianPosterior::new",
                expected: vec![mu.len()],
                got: vec![log_sigma.len()],
            });
        }
        if !mu.iter().chain(&log_sigma).all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite { context: "GaussianPosterior::new".to_string() });
        }
        Ok(GaussianPosterior { mu, log_sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }
}

/// Two linear heads mapping an encoder summary to posterior mean and log
/// scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeads {
    pub mu: Linear,
    pub log_sigma: Linear,
}

impl GaussianHeads {
    /// Heads from `in_dim` to `latent_dim`, weights N(0, 1/in_dim), zero
    /// biases.
    pub fn new(in_dim: usize, latent_dim: usize, rng: &mut RngStream) -> Self {
        let std = (1.0 / in_dim as f64).sqrt();
        let mut make = |_: ()| Linear {
            w: Array::from_fn(vec![latent_dim, in_dim], |_| rng.normal() * std),
            b: Array::zeros(vec![latent_dim]),
        };
        GaussianHeads { mu: make(()), log_sigma: make(()) }
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.b.len()
    }

    pub fn in_dim(&self) -> usize {
        self.mu.w.cols()
    }
}

/// Applies both heads to an encoder summary vector.
pub fn encode_gaussian(heads: &GaussianHeads, h: &[f64]) -> Result<GaussianPosterior> {
    if h.len() != heads.in_dim() {
        return Err(CoreError::ShapeMismatch {
            context: "encode_gaussian input",
            expected: vec![heads.in_dim()],
            got: vec![h.len()],
        });
    }
    let d = heads.latent_dim();
    let mut mu = Vec::with_capacity(d);
    let mut log_sigma = Vec::with_capacity(d);
    for o in 0..d {
        mu.push(dot(heads.mu.w.row(o), h) + heads.mu.b.data()[o]);
        log_sigma.push(dot(heads.log_sigma.w.row(o), h) + heads.log_sigma.b.data()[o]);
    }
    GaussianPosterior::new(mu, log_sigma)
}

/// Backward pass of [`encode_gaussian`]: accumulates head parameter
/// gradients and adds the input gradient onto `grad_h`.
pub fn encode_gaussian_backward(
    heads: &GaussianHeads,
    h: &[f64],
    grad_mu: &[f64],
    grad_log_sigma: &[f64],
    grads: &mut GaussianHeads,
    grad_h: &mut [f64],
) {
    for o in 0..heads.latent_dim() {
        let gm = grad_mu[o];
        axpy(gm, h, grads.mu.w.row_mut(o));
        grads.mu.b.data_mut()[o] += gm;
        axpy(gm, heads.mu.w.row(o), grad_h);
        let gl = grad_log_sigma[o];
        axpy(gl, h, grads.log_sigma.w.row_mut(o));
        grads.log_sigma.b.data_mut()[o] += gl;
        axpy(gl, heads.log_sigma.w.row(o), grad_h);
    }
}

/// Reparameterized sample `z = mu + sigma * eps`.
///
/// Gradient convention used by the training code: dz/dmu = 1 and
/// dz/d(log sigma) = sigma * eps, elementwise.
pub fn reparameterize(post: &GaussianPosterior, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != post.dim() {
        return Err(CoreError::ShapeMismatch {
            context: "reparameterize noise",
            expected: vec![post.dim()],
            got: vec![eps.len()],
        });
    }
    Ok(post
        .mu
        .iter()
        .zip(&post.log_sigma)
        .zip(eps)
        .map(|((m, l), e)| m + l.exp() * e)
        .collect())
}

/// KL divergence to the standard normal, summed over latent dimensions:
/// `sum_d 0.5 * (mu_d^2 + sigma_d^2 - 1 - log sigma_d^2)`. Batch averaging
/// is the caller's concern.
pub fn kl_to_standard_normal(post: &GaussianPosterior) -> f64 {
    post.mu
        .iter()
        .zip(&post.log_sigma)
        .map(|(m, l)| {
            let s2 = (2.0 * l).exp();
            0.5 * (m * m + s2 - 1.0 - 2.0 * l)
        })
        .sum()
}

/// PI controller state for the KL weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub kp: f64,
    pub ki: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub setpoint: f64,
    /// Integral accumulator over errors, starting at zero.
    pub sum_e: f64,
    /// Most recent output.
    pub beta: f64,
}

impl ControllerState {
    pub fn new(kp: f64, ki: f64, beta_min: f64, beta_max: f64, setpoint: f64) -> Result<Self> {
        if !(beta_min <= beta_max) || setpoint < 0.0 {
            return Err(CoreError::InvalidArgument {
                context: format!(
                    "ControllerState::new: beta range [{beta_min}, {beta_max}], setpoint {setpoint}"
                ),
            });
        }
        Ok(ControllerState { kp, ki, beta_min, beta_max, setpoint, sum_e: 0.0, beta: beta_min })
    }

    /// Desk defaults: kp 0.01, ki 1e-4, beta in [0, 1], KL target 3.
    pub fn with_defaults() -> Self {
        ControllerState::new(0.01, 1e-4, 0.0, 1.0, 3.0).unwrap()
    }
}

/// One PI update from an observed KL. The returned beta is the weight to
/// apply to the KL term of the step that observed it; call exactly once per
/// training step.
pub fn pi_beta_update(state: &mut ControllerState, kl_observed: f64) -> Result<f64> {
    if !kl_observed.is_finite() || kl_observed < 0.0 {
        return Err(CoreError::InvalidArgument {
            context: format!("pi_beta_update: observed KL {kl_observed}"),
        });
    }
    let e = state.setpoint - kl_observed;
    state.sum_e += e;
    let raw = state.kp / (1.0 + e.exp()) - state.ki * state.sum_e + state.beta_min;
    state.beta = raw.clamp(state.beta_min, state.beta_max);
    Ok(state.beta)
}

/// Linear warm-up used by the cost-annealing ablation: weight ramps from 0
/// to 1 over `ramp` steps, then stays at 1. A zero ramp means no annealing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnealSchedule {
    pub ramp: u64,
}

/// Annealing weight at a step.
pub fn anneal_weight(sched: &AnnealSchedule, step: u64) -> f64 {
    if sched.ramp == 0 || step >= sched.ramp {
        1.0
    } else {
        step as f64 / sched.ramp as f64
    }
}
