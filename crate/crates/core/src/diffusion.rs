//! Denoising diffusion: linear beta schedule, forward corruption, noise
//! prediction loss, and ancestral sampling. Used twice in the stack, once
//! over spectrogram frames (conditional refiner) and once over style
//! latents (unconditional bridge).

use crate::error::{CoreError, Result};
use crate::numerics::net::{FeedForwardNet, NetCache};
use crate::numerics::rng::RngStream;

/// Dimension of the sinusoidal timestep embedding fed to denoisers.
pub const T_EMBED_DIM: usize = 16;

/// Reference schedule endpoints at one thousand steps; smaller step counts
/// rescale both endpoints by `1000 / T` so the total injected noise stays
/// comparable at desk scale.
pub const REFERENCE_T: usize = 1000;
pub const REFERENCE_BETA_START: f64 = 1e-4;
pub const REFERENCE_BETA_END: f64 = 0.02;

/// Precomputed noise schedule. Index convention: `beta(t)` etc. take
/// `t in 1..=len`, matching the process notation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas up to and including step `t`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// Posterior noise scale; zero at `t = 1` so the final sampling step is
    /// deterministic.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }
}

/// Linear beta schedule over `t_steps` steps. Endpoints must lie in (0, 1).
pub fn make_schedule(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if t_steps == 0 {
        return Err(CoreError::InvalidArgument {
            context: "make_schedule: t_steps must be at least 1".to_string(),
        });
    }
    for (name, b) in [("beta_start", beta_start), ("beta_end", beta_end)] {
        if !(b > 0.0 && b < 1.0) {
            return Err(CoreError::InvalidArgument {
                context: format!("make_schedule: {name} = {b} outside (0, 1)"),
            });
        }
    }
    let betas: Vec<f64> = (0..t_steps)
        .map(|i| {
            if t_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_steps);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    let mut sigmas = Vec::with_capacity(t_steps);
    for t in 1..=t_steps {
        let prev = if t == 1 { 1.0 } else { alpha_bars[t - 2] };
        let var = (1.0 - prev) / (1.0 - alpha_bars[t - 1]) * betas[t - 1];
        sigmas.push(var.max(0.0).sqrt());
    }
    Ok(DiffusionSchedule { betas, alphas, alpha_bars, sigmas })
}

/// Linear schedule with the reference endpoints rescaled to `t_steps`.
pub fn default_schedule(t_steps: usize) -> Result<DiffusionSchedule> {
    let scale = REFERENCE_T as f64 / t_steps as f64;
    make_schedule(t_steps, REFERENCE_BETA_START * scale, REFERENCE_BETA_END * scale)
}

/// Sinusoidal embedding of an integer timestep, `T_EMBED_DIM` wide.
pub fn timestep_embedding(t: usize) -> Vec<f64> {
    let half = T_EMBED_DIM / 2;
    let mut out = Vec::with_capacity(T_EMBED_DIM);
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / (half - 1) as f64);
        let angle = t as f64 * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

/// Anything that predicts the noise component of a corrupted sample.
pub trait NoisePredictor {
    fn predict(&self, x_t: &[f64], t: usize, cond: Option<&[f64]>) -> Result<Vec<f64>>;
}

/// Gradient of a denoiser evaluation with respect to its inputs, split back
/// into the original segments.
#[derive(Debug, Clone)]
pub struct DenoiserInputGrads {
    pub x_t: Vec<f64>,
    pub cond: Option<Vec<f64>>,
}

/// MLP noise predictor over `(x_t, timestep embedding, optional condition)`.
/// The condition width is fixed per instance; passing a condition to an
/// unconditional denoiser (or vice versa) is a shape error.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub net: FeedForwardNet,
    data_dim: usize,
    cond_dim: Option<usize>,
}

impl Denoiser {
    /// Builds a denoiser whose MLP has the given hidden widths.
    pub fn new(
        data_dim: usize,
        cond_dim: Option<usize>,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<Self> {
        let in_dim = data_dim + T_EMBED_DIM + cond_dim.unwrap_or(0);
        let mut widths = vec![in_dim];
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        Ok(Denoiser { net: FeedForwardNet::new(&widths, rng)?, data_dim, cond_dim })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn cond_dim(&self) -> Option<usize> {
        self.cond_dim
    }

    fn check_inputs(&self, x_t: &[f64], cond: Option<&[f64]>) -> Result<()> {
        if x_t.len() != self.data_dim {
            return Err(CoreError::ShapeMismatch {
                context: "Denoiser x_t",
                expected: vec![self.data_dim],
                got: vec![x_t.len()],
            });
        }
        match (self.cond_dim, cond) {
            (None, None) => Ok(()),
            (Some(d), Some(c)) if c.len() == d => Ok(()),
            (expected, got) => Err(CoreError::ShapeMismatch {
                context: "Denoiser condition",
                expected: vec![expected.unwrap_or(0)],
                got: vec![got.map_or(0, <[f64]>::len)],
            }),
        }
    }

    /// Assembles the net input `[x_t, embed(t), cond]` into `buf`.
    pub fn assemble_input(&self, x_t: &[f64], t: usize, cond: Option<&[f64]>, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(x_t);
        buf.extend_from_slice(&timestep_embedding(t));
        if let Some(c) = cond {
            buf.extend_from_slice(c);
        }
    }

    /// Forward pass caching activations for a later backward pass. The
    /// prediction is the last entry of `cache.acts`.
    pub fn predict_cached(
        &self,
        x_t: &[f64],
        t: usize,
        cond: Option<&[f64]>,
        cache: &mut NetCache,
    ) -> Result<()> {
        self.check_inputs(x_t, cond)?;
        let mut input = Vec::with_capacity(self.net.in_dim());
        self.assemble_input(x_t, t, cond, &mut input);
        self.net.forward_cached(&input, cache)
    }

    /// Backward pass from a loss gradient at the prediction. Parameter
    /// gradients are accumulated into `grads`; input gradients are returned
    /// split into the `x_t` and condition segments (the timestep embedding
    /// is a constant).
    pub fn backward(
        &self,
        cache: &NetCache,
        grad_pred: &[f64],
        grads: &mut FeedForwardNet,
    ) -> Result<DenoiserInputGrads> {
        let grad_in = self.net.backward(cache, grad_pred, grads)?;
        let x_grad = grad_in[..self.data_dim].to_vec();
        let cond_grad = self
            .cond_dim
            .map(|d| grad_in[self.data_dim + T_EMBED_DIM..self.data_dim + T_EMBED_DIM + d].to_vec());
        Ok(DenoiserInputGrads { x_t: x_grad, cond: cond_grad })
    }
}

impl NoisePredictor for Denoiser {
    fn predict(&self, x_t: &[f64], t: usize, cond: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut cache = NetCache::default();
        self.predict_cached(x_t, t, cond, &mut cache)?;
        Ok(cache.acts.pop().unwrap())
    }
}

fn check_t(sched: &DiffusionSchedule, t: usize) -> Result<()> {
    if t == 0 || t > sched.len() {
        return Err(CoreError::InvalidArgument {
            context: format!("timestep {t} outside 1..={}", sched.len()),
        });
    }
    Ok(())
}

/// Closed-form forward corruption: `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    check_t(sched, t)?;
    if x0.len() != eps.len() {
        return Err(CoreError::ShapeMismatch {
            context: "q_sample noise",
            expected: vec![x0.len()],
            got: vec![eps.len()],
        });
    }
    let ab = sched.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| signal * x + noise * e).collect())
}

/// Noise-prediction loss for one sample at one timestep: mean squared error
/// between drawn and predicted noise. Callers average over a batch.
pub fn ddpm_loss(
    den: &impl NoisePredictor,
    x0: &[f64],
    t: usize,
    eps: &[f64],
    cond: Option<&[f64]>,
    sched: &DiffusionSchedule,
) -> Result<f64> {
    let x_t = q_sample(x0, t, eps, sched)?;
    let pred = den.predict(&x_t, t, cond)?;
    let n = eps.len() as f64;
    Ok(eps.iter().zip(&pred).map(|(e, p)| (e - p) * (e - p)).sum::<f64>() / n)
}

/// One ancestral sampling step from `x_t` to `x_{t-1}`. `z` is the injected
/// standard normal noise; it is ignored at `t = 1` where `sigma` is zero.
pub fn reverse_step(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    z: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    check_t(sched, t)?;
    if x_t.len() != eps_hat.len() || x_t.len() != z.len() {
        return Err(CoreError::ShapeMismatch {
            context: "reverse_step inputs",
            expected: vec![x_t.len()],
            got: vec![eps_hat.len(), z.len()],
        });
    }
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let noise_coeff = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let sigma = sched.sigma(t);
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((x, e), n)| inv_sqrt_alpha * (x - noise_coeff * e) + sigma * n)
        .collect())
}

/// Full ancestral sampling loop producing one vector of width `dim`.
pub fn sample(
    den: &impl NoisePredictor,
    dim: usize,
    cond: Option<&[f64]>,
    sched: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut x = rng.normal_vec(dim);
    let zeros = vec![0.0; dim];
    for t in (1..=sched.len()).rev() {
        let eps_hat = den.predict(&x, t, cond)?;
        let z = if t > 1 { rng.normal_vec(dim) } else { zeros.clone() };
        x = reverse_step(&x, t, &eps_hat, &z, sched)?;
    }
    Ok(x)
}
