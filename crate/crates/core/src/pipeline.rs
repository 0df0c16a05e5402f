//! End-to-end wiring: reference encoder → controlled Gaussian posterior →
//! vector quantization → per-frame acoustic decoder → conditional diffusion
//! refiner, plus an unconditional diffusion bridge over the latent space
//! that is sampled only at inference. Training runs one optimization step
//! over the mode's trainable subset per call; the bridge trains in its own
//! alternating step on detached latents.

use crate::diffusion::{self, default_schedule, q_sample, Denoiser, DiffusionSchedule};
use crate::error::{CoreError, Result};
use crate::evalmetrics::LatentSynth;
use crate::numerics::adam::{adam_step, round_f32, AdamState};
use crate::numerics::array::Array;
use crate::numerics::net::{FeedForwardNet, Linear, NetCache};
use crate::numerics::rng::RngStream;
use crate::numerics::{axpy, dot};
use crate::quantizer::{ema_update, nearest_code, vq_loss, Codebook};
use crate::toydata::{ToyDataset, ToyMel, ToySample, BANDS, CONTENT_VOCAB, FRAMES};
use crate::vae::{
    anneal_weight, encode_gaussian, encode_gaussian_backward, kl_to_standard_normal,
    pi_beta_update, reparameterize, AnnealSchedule, ControllerState, GaussianHeads,
};

/// Training pipeline variant. `Vaefs` and `TwoStageS1` run the same
/// computation (backbone only, no refiner loss); the distinct names record
/// intent in configs and logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Vaefs,
    OneStage,
    TwoStageS1,
    TwoStageS2,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "vaefs" => Ok(Mode::Vaefs),
            "one_stage" => Ok(Mode::OneStage),
            "two_stage_s1" => Ok(Mode::TwoStageS1),
            "two_stage_s2" => Ok(Mode::TwoStageS2),
            other => Err(CoreError::InvalidArgument {
                context: format!(
                    "unknown mode '{other}' (expected vaefs, one_stage, two_stage_s1 or two_stage_s2)"
                ),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Vaefs => "vaefs",
            Mode::OneStage => "one_stage",
            Mode::TwoStageS1 => "two_stage_s1",
            Mode::TwoStageS2 => "two_stage_s2",
        }
    }

    /// The refiner loss is part of this mode's objective.
    pub fn has_refiner_loss(self) -> bool {
        matches!(self, Mode::OneStage | Mode::TwoStageS2)
    }

    /// Encoder, heads, embedding table, decoder and codebook receive
    /// updates; false only in the frozen second stage.
    pub fn trains_backbone(self) -> bool {
        !matches!(self, Mode::TwoStageS2)
    }
}

/// Run configuration. The first block mirrors the config-file surface; the
/// sizing block below it is fixed by the artifact, not file-exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub gamma: f64,
    pub kp: f64,
    pub ki: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub kl_target: f64,
    pub t_refiner: usize,
    pub t_bridge: usize,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub dataset_n: usize,
    /// Cost-annealing ramp used when the controller is disabled.
    pub ramp: u64,
    pub use_controlvae: bool,
    pub use_vq: bool,
    /// Leading steps that bypass the codebook: the decoder consumes the
    /// raw posterior sample until the encoder carries information worth
    /// quantizing. With the quantizer active from step zero, the commitment
    /// pull toward noise-assigned codes keeps μ at the origin and the
    /// setpoint is met by shrinking σ alone — a latent the decoder then
    /// rightly ignores. Ignored when use_vq is off.
    pub vq_warmup: u64,
    pub use_bridge: bool,
    pub enc_dim: usize,
    pub embed_dim: usize,
    /// Width of the projected coarse clip inside the refiner condition;
    /// frame-position features are appended on top of it.
    pub cond_proj_dim: usize,
    pub dec_hidden: usize,
    pub ref_hidden: usize,
    pub bridge_hidden: usize,
}

impl PipelineConfig {
    /// Desk-scale defaults: small enough to train in minutes on one core.
    pub fn desk_default(mode: Mode) -> Self {
        PipelineConfig {
            mode,
            latent_dim: 32,
            codebook_size: 64,
            gamma: 0.25,
            kp: 0.01,
            ki: 1e-4,
            beta_min: 0.0,
            beta_max: 1.0,
            kl_target: 3.0,
            t_refiner: 50,
            t_bridge: 50,
            steps: 20_000,
            batch: 16,
            lr: 1e-3,
            seed: 1,
            dataset_n: 500,
            ramp: 10_000,
            use_controlvae: true,
            use_vq: true,
            vq_warmup: 2_000,
            use_bridge: true,
            enc_dim: 32,
            embed_dim: 16,
            cond_proj_dim: 32,
            dec_hidden: 24,
            ref_hidden: 64,
            bridge_hidden: 64,
        }
    }

    /// Paper-fidelity settings where they differ from the desk scale:
    /// 1024 codes, 1000 diffusion steps, 320k iterations.
    pub fn paper_preset(mode: Mode) -> Self {
        PipelineConfig {
            codebook_size: 1024,
            t_refiner: 1000,
            t_bridge: 1000,
            steps: 320_000,
            ..PipelineConfig::desk_default(mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.latent_dim,
            self.codebook_size,
            self.batch,
            self.t_refiner,
            self.t_bridge,
            self.enc_dim,
            self.embed_dim,
            self.cond_proj_dim,
            self.dec_hidden,
            self.ref_hidden,
            self.bridge_hidden,
        ];
        if dims.iter().any(|&v| v == 0) {
            return Err(CoreError::InvalidArgument {
                context: "PipelineConfig: sizes, batch and step counts must be positive"
                    .to_string(),
            });
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(CoreError::InvalidArgument {
                context: format!("PipelineConfig: gamma {}", self.gamma),
            });
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CoreError::InvalidArgument {
                context: format!("PipelineConfig: lr {}", self.lr),
            });
        }
        if !(self.beta_min <= self.beta_max) || !(self.kl_target >= 0.0) {
            return Err(CoreError::InvalidArgument {
                context: format!(
                    "PipelineConfig: beta range [{}, {}], kl_target {}",
                    self.beta_min, self.beta_max, self.kl_target
                ),
            });
        }
        if self.dataset_n < 10 {
            return Err(CoreError::InvalidArgument {
                context: format!("PipelineConfig: dataset_n {} < 10", self.dataset_n),
            });
        }
        Ok(())
    }
}

/// Sin/cos frame-position features appended to the refiner condition. The
/// projected coarse clip is shared by all frames, so the refiner's
/// knowledge of which frame it denoises has to enter here; four harmonics
/// span the envelope family and the ridge swing exactly.
pub const POSENC_DIM: usize = 8;

fn frame_posenc(l: usize, out: &mut [f64]) {
    for k in 0..POSENC_DIM / 2 {
        let angle = 2.0 * std::f64::consts::PI * (k + 1) as f64 * l as f64 / FRAMES as f64;
        out[2 * k] = angle.sin();
        out[2 * k + 1] = angle.cos();
    }
}

/// Every learnable tensor of the system, in one place. Construction rounds
/// all values to 32-bit representable numbers so a fresh state checkpoints
/// losslessly before the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub ref_enc: Linear,
    pub heads: GaussianHeads,
    pub embed: Array,
    pub dec: FeedForwardNet,
    pub cond: Linear,
    pub refiner: Denoiser,
    pub bridge: Denoiser,
}

impl PipelineParams {
    pub fn new(cfg: &PipelineConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let enc_std = (1.0 / BANDS as f64).sqrt();
        let ref_enc = Linear {
            w: Array::from_fn(vec![cfg.enc_dim, BANDS], |_| rng.normal() * enc_std),
            b: Array::zeros(vec![cfg.enc_dim]),
        };
        let heads = GaussianHeads::new(cfg.enc_dim, cfg.latent_dim, rng);
        let embed = Array::from_fn(vec![CONTENT_VOCAB, cfg.embed_dim], |_| rng.normal());
        let dec = FeedForwardNet::new(
            &[cfg.embed_dim + cfg.latent_dim, cfg.dec_hidden, BANDS],
            rng,
        )?;
        let cond_std = (1.0 / (BANDS * FRAMES) as f64).sqrt();
        let cond = Linear {
            w: Array::from_fn(vec![cfg.cond_proj_dim, BANDS * FRAMES], |_| {
                rng.normal() * cond_std
            }),
            b: Array::zeros(vec![cfg.cond_proj_dim]),
        };
        let refiner = Denoiser::new(
            BANDS,
            Some(cfg.cond_proj_dim + POSENC_DIM),
            &[cfg.ref_hidden],
            rng,
        )?;
        let bridge = Denoiser::new(cfg.latent_dim, None, &[cfg.bridge_hidden], rng)?;
        let mut params =
            PipelineParams { ref_enc, heads, embed, dec, cond, refiner, bridge };
        for (_, a) in params.named_mut() {
            for v in a.data_mut() {
                *v = round_f32(*v);
            }
        }
        Ok(params)
    }

    /// Named tensors in the fixed checkpoint/optimizer order.
    pub fn named(&self) -> Vec<(String, &Array)> {
        let mut out = vec![
            ("ref_enc.w".to_string(), &self.ref_enc.w),
            ("ref_enc.b".to_string(), &self.ref_enc.b),
            ("heads.mu.w".to_string(), &self.heads.mu.w),
            ("heads.mu.b".to_string(), &self.heads.mu.b),
            ("heads.log_sigma.w".to_string(), &self.heads.log_sigma.w),
            ("heads.log_sigma.b".to_string(), &self.heads.log_sigma.b),
            ("embed".to_string(), &self.embed),
        ];
        out.extend(self.dec.named_tensors("dec"));
        out.push(("cond.w".to_string(), &self.cond.w));
        out.push(("cond.b".to_string(), &self.cond.b));
        out.extend(self.refiner.net.named_tensors("refiner"));
        out.extend(self.bridge.net.named_tensors("bridge"));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Array)> {
        let mut out = vec![
            ("ref_enc.w".to_string(), &mut self.ref_enc.w),
            ("ref_enc.b".to_string(), &mut self.ref_enc.b),
            ("heads.mu.w".to_string(), &mut self.heads.mu.w),
            ("heads.mu.b".to_string(), &mut self.heads.mu.b),
            ("heads.log_sigma.w".to_string(), &mut self.heads.log_sigma.w),
            ("heads.log_sigma.b".to_string(), &mut self.heads.log_sigma.b),
            ("embed".to_string(), &mut self.embed),
        ];
        out.extend(self.dec.named_tensors_mut("dec"));
        out.push(("cond.w".to_string(), &mut self.cond.w));
        out.push(("cond.b".to_string(), &mut self.cond.b));
        out.extend(self.refiner.net.named_tensors_mut("refiner"));
        out.extend(self.bridge.net.named_tensors_mut("bridge"));
        out
    }

    pub fn spans(&self) -> Vec<(String, usize)> {
        self.named().into_iter().map(|(n, a)| (n, a.len())).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, a) in self.named() {
            out.extend_from_slice(a.data());
        }
        out
    }

    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.named().iter().map(|(_, a)| a.len()).sum();
        if flat.len() != total {
            return Err(CoreError::ShapeMismatch {
                context: "PipelineParams::unflatten_from",
                expected: vec![total],
                got: vec![flat.len()],
            });
        }
        let mut pos = 0;
        for (_, a) in self.named_mut() {
            let n = a.len();
            a.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(())
    }
}

/// Optimizer grouping. The backbone trains in stage-1-style modes, the
/// refinement group (condition projection + refiner) in refiner modes; the
/// bridge always runs under its own optimizer in its own step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Refine,
    Bridge,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("bridge") {
        ParamGroup::Bridge
    } else if name.starts_with("cond") || name.starts_with("refiner") {
        ParamGroup::Refine
    } else {
        ParamGroup::Backbone
    }
}

/// Gradient accumulator shaped like [`PipelineParams`]; the denoisers
/// reduce to their nets since timestep embeddings carry no parameters.
#[derive(Debug, Clone)]
pub struct PipelineGrads {
    pub ref_enc: Linear,
    pub heads: GaussianHeads,
    pub embed: Array,
    pub dec: FeedForwardNet,
    pub cond: Linear,
    pub refiner: FeedForwardNet,
    pub bridge: FeedForwardNet,
}

fn zero_linear(l: &Linear) -> Linear {
    Linear { w: l.w.zeros_like(), b: l.b.zeros_like() }
}

impl PipelineGrads {
    pub fn zeros(params: &PipelineParams) -> Self {
        PipelineGrads {
            ref_enc: zero_linear(&params.ref_enc),
            heads: GaussianHeads {
                mu: zero_linear(&params.heads.mu),
                log_sigma: zero_linear(&params.heads.log_sigma),
            },
            embed: params.embed.zeros_like(),
            dec: params.dec.zeros_like(),
            cond: zero_linear(&params.cond),
            refiner: params.refiner.net.zeros_like(),
            bridge: params.bridge.net.zeros_like(),
        }
    }

    /// Same fixed order as [`PipelineParams::named`].
    pub fn named(&self) -> Vec<(String, &Array)> {
        let mut out = vec![
            ("ref_enc.w".to_string(), &self.ref_enc.w),
            ("ref_enc.b".to_string(), &self.ref_enc.b),
            ("heads.mu.w".to_string(), &self.heads.mu.w),
            ("heads.mu.b".to_string(), &self.heads.mu.b),
            ("heads.log_sigma.w".to_string(), &self.heads.log_sigma.w),
            ("heads.log_sigma.b".to_string(), &self.heads.log_sigma.b),
            ("embed".to_string(), &self.embed),
        ];
        out.extend(self.dec.named_tensors("dec"));
        out.push(("cond.w".to_string(), &self.cond.w));
        out.push(("cond.b".to_string(), &self.cond.b));
        out.extend(self.refiner.named_tensors("refiner"));
        out.extend(self.bridge.named_tensors("bridge"));
        out
    }

    pub fn fill_zero(&mut self) {
        self.ref_enc.w.fill_zero();
        self.ref_enc.b.fill_zero();
        self.heads.mu.w.fill_zero();
        self.heads.mu.b.fill_zero();
        self.heads.log_sigma.w.fill_zero();
        self.heads.log_sigma.b.fill_zero();
        self.embed.fill_zero();
        for l in &mut self.dec.layers {
            l.w.fill_zero();
            l.b.fill_zero();
        }
        self.cond.w.fill_zero();
        self.cond.b.fill_zero();
        for l in &mut self.refiner.layers {
            l.w.fill_zero();
            l.b.fill_zero();
        }
        for l in &mut self.bridge.layers {
            l.w.fill_zero();
            l.b.fill_zero();
        }
    }

    /// First tensor in `group` holding a nonzero entry, if any.
    pub fn nonzero_in(&self, group: ParamGroup) -> Option<String> {
        for (n, a) in self.named() {
            if param_group(&n) == group && a.data().iter().any(|&v| v != 0.0) {
                return Some(n);
            }
        }
        None
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, a) in self.named() {
            out.extend_from_slice(a.data());
        }
        out
    }
}

/// Refiner timestep and noise for one element, one draw per frame.
#[derive(Debug, Clone)]
pub struct RefinerDraw {
    pub t: Vec<usize>,
    /// Noise, bands × frames.
    pub eps: Array,
}

/// Bridge timestep and noise for one element.
#[derive(Debug, Clone)]
pub struct BridgeDraw {
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Pinned stochastic draws and stop-gradient boundary values for one batch
/// element. With the plan fixed, the batch losses are a smooth,
/// deterministic function of the parameters — which is what makes them
/// finite-difference checkable.
#[derive(Debug, Clone)]
pub struct ElementPlan {
    /// Index into the sample slice handed to `run_batch`.
    pub index: usize,
    /// Reparameterization noise, `latent_dim` wide.
    pub eps_z: Vec<f64>,
    /// Present when the mode carries the refiner loss.
    pub refiner_draw: Option<RefinerDraw>,
    /// Present when the bridge is enabled.
    pub bridge_draw: Option<BridgeDraw>,
    /// Boundary values recorded at the pre-step parameters by `fill_pins`:
    /// the sampled latent, its quantization and the code index. Constants
    /// under differentiation (stop-gradient).
    pub z0: Vec<f64>,
    pub q0: Vec<f64>,
    pub code: usize,
}

#[derive(Debug, Clone)]
pub struct StepPlan {
    pub elems: Vec<ElementPlan>,
    /// KL weight in effect for this step; a boundary value, not a
    /// differentiated quantity.
    pub beta: f64,
}

/// Draws batch indices and every noise source for one step. Draw order is
/// fixed: per element the index, the reparameterization noise, then per
/// frame the refiner timestep and its noise column, then the bridge draw.
pub fn draw_plan(
    cfg: &PipelineConfig,
    rng: &mut RngStream,
    n_samples: usize,
) -> Result<StepPlan> {
    if n_samples == 0 {
        return Err(CoreError::InvalidArgument {
            context: "draw_plan: empty sample pool".to_string(),
        });
    }
    let mut elems = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let index = rng.uniform_usize(n_samples);
        let eps_z = rng.normal_vec(cfg.latent_dim);
        let refiner_draw = if cfg.mode.has_refiner_loss() {
            let mut t = Vec::with_capacity(FRAMES);
            let mut eps = Array::zeros(vec![BANDS, FRAMES]);
            for l in 0..FRAMES {
                t.push(rng.uniform_usize(cfg.t_refiner) + 1);
                for f in 0..BANDS {
                    *eps.at_mut(f, l) = rng.normal();
                }
            }
            Some(RefinerDraw { t, eps })
        } else {
            None
        };
        let bridge_draw = if cfg.use_bridge {
            Some(BridgeDraw {
                t: rng.uniform_usize(cfg.t_bridge) + 1,
                eps: rng.normal_vec(cfg.latent_dim),
            })
        } else {
            None
        };
        elems.push(ElementPlan {
            index,
            eps_z,
            refiner_draw,
            bridge_draw,
            z0: Vec::new(),
            q0: Vec::new(),
            code: 0,
        });
    }
    Ok(StepPlan { elems, beta: 0.0 })
}

/// Per-frame tanh projection mean-pooled over frames. When `acts` is given
/// it receives the post-tanh frame vectors for the backward pass.
fn encode_mel(
    enc: &Linear,
    mel: &ToyMel,
    mut acts: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    if enc.w.cols() != BANDS {
        return Err(CoreError::ShapeMismatch {
            context: "reference encoder input width",
            expected: vec![enc.w.cols()],
            got: vec![BANDS],
        });
    }
    let d = enc.w.rows();
    let mut h = vec![0.0; d];
    if let Some(a) = acts.as_deref_mut() {
        a.clear();
    }
    for l in 0..FRAMES {
        let col = mel.frame(l);
        let mut a_l = Vec::with_capacity(d);
        for o in 0..d {
            a_l.push((dot(enc.w.row(o), &col) + enc.b.data()[o]).tanh());
        }
        for (hv, &v) in h.iter_mut().zip(&a_l) {
            *hv += v;
        }
        if let Some(a) = acts.as_deref_mut() {
            a.push(a_l);
        }
    }
    for v in &mut h {
        *v /= FRAMES as f64;
    }
    Ok(h)
}

/// Style summary of a clip: per-frame linear projection, tanh, mean pool.
pub fn reference_encode(params: &PipelineParams, mel: &ToyMel) -> Result<Vec<f64>> {
    encode_mel(&params.ref_enc, mel, None)
}

/// Decodes one clip: per frame, the decoder maps (content embedding ⊕
/// style vector) to a band column. Returns the raw matrix — callers clamp
/// into mel range where needed.
pub fn acoustic_decode(
    params: &PipelineParams,
    content: &[usize],
    style: &[f64],
) -> Result<Array> {
    if content.len() != FRAMES {
        return Err(CoreError::ShapeMismatch {
            context: "acoustic_decode content length",
            expected: vec![FRAMES],
            got: vec![content.len()],
        });
    }
    let ed = params.embed.cols();
    if style.len() + ed != params.dec.in_dim() {
        return Err(CoreError::ShapeMismatch {
            context: "acoustic_decode style width",
            expected: vec![params.dec.in_dim() - ed],
            got: vec![style.len()],
        });
    }
    let mut out = Array::zeros(vec![BANDS, FRAMES]);
    let mut input = vec![0.0; params.dec.in_dim()];
    let mut memo: Vec<Option<Vec<f64>>> = vec![None; params.embed.rows()];
    for (l, &c) in content.iter().enumerate() {
        if c >= params.embed.rows() {
            return Err(CoreError::InvalidArgument {
                context: format!("acoustic_decode: unknown content id {c}"),
            });
        }
        if memo[c].is_none() {
            input[..ed].copy_from_slice(params.embed.row(c));
            input[ed..].copy_from_slice(style);
            memo[c] = Some(params.dec.forward(&input)?);
        }
        let col = memo[c].as_ref().unwrap();
        for f in 0..BANDS {
            *out.at_mut(f, l) = col[f];
        }
    }
    Ok(out)
}

/// Runs the encoder at the current parameters for every planned element and
/// records the stop-gradient boundary values (sampled latent, its
/// quantization, the code index). Returns the batch-mean KL observed at
/// those parameters — the value the controller reacts to.
pub fn fill_pins(
    params: &PipelineParams,
    book: &Codebook,
    cfg: &PipelineConfig,
    samples: &[ToySample],
    plan: &mut StepPlan,
) -> Result<f64> {
    if plan.elems.is_empty() {
        return Err(CoreError::InvalidArgument {
            context: "fill_pins: empty plan".to_string(),
        });
    }
    let mut kl_sum = 0.0;
    for e in &mut plan.elems {
        let s = samples.get(e.index).ok_or(CoreError::IndexOutOfBounds {
            context: "fill_pins sample index",
            index: e.index,
            len: samples.len(),
        })?;
        let h = encode_mel(&params.ref_enc, &s.mel, None)?;
        let post = encode_gaussian(&params.heads, &h)?;
        kl_sum += kl_to_standard_normal(&post);
        let z = reparameterize(&post, &e.eps_z)?;
        let (q, code) = if cfg.use_vq { nearest_code(book, &z)? } else { (z.clone(), 0) };
        e.z0 = z;
        e.q0 = q;
        e.code = code;
    }
    Ok(kl_sum / plan.elems.len() as f64)
}

/// Per-term batch means from one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub l_rec: f64,
    pub kl: f64,
    pub l_q: f64,
    pub l_r: f64,
    pub l_b: f64,
}

impl BatchLosses {
    /// Additive objective: reconstruction + β·KL + quantization + refiner
    /// + bridge.
    pub fn total(&self, beta: f64) -> f64 {
        self.l_rec + beta * self.kl + self.l_q + self.l_r + self.l_b
    }
}

/// Evaluates every loss term of one planned batch at the given parameters
/// and, when a gradient container is supplied, accumulates the exact
/// gradients of the mode's objective alongside the same forward values.
///
/// Stop-gradient contract: the plan's boundary values (z0, q0, the bridge
/// target) and the KL weight are constants, so the computed function is
/// smooth in the parameters and is precisely what the optimizer descends.
/// The straight-through estimator enters as `z + (q0 − z0)`: the value is
/// the quantized latent, the derivative is the identity. In two_stage_s2
/// only the refiner objective routes gradients and the condition is the
/// frozen backbone's output, a constant.
pub fn run_batch(
    params: &PipelineParams,
    samples: &[ToySample],
    plan: &StepPlan,
    cfg: &PipelineConfig,
    sched_ref: &DiffusionSchedule,
    sched_bridge: &DiffusionSchedule,
    mut grads: Option<&mut PipelineGrads>,
) -> Result<BatchLosses> {
    let b = plan.elems.len();
    if b == 0 {
        return Err(CoreError::InvalidArgument {
            context: "run_batch: empty plan".to_string(),
        });
    }
    let d = cfg.latent_dim;
    if params.heads.latent_dim() != d {
        return Err(CoreError::ShapeMismatch {
            context: "run_batch latent width",
            expected: vec![d],
            got: vec![params.heads.latent_dim()],
        });
    }
    let ed = params.embed.cols();
    if params.dec.in_dim() != ed + d {
        return Err(CoreError::ShapeMismatch {
            context: "run_batch decoder input",
            expected: vec![ed + d],
            got: vec![params.dec.in_dim()],
        });
    }
    let want_refiner = cfg.mode.has_refiner_loss();
    let backbone = cfg.mode.trains_backbone();
    let need_backbone_grads = backbone && grads.is_some();
    let bf = b as f64;
    let fl = (BANDS * FRAMES) as f64;
    let ids_count = params.embed.rows();

    let mut totals = BatchLosses { l_rec: 0.0, kl: 0.0, l_q: 0.0, l_r: 0.0, l_b: 0.0 };

    let mut enc_acts: Vec<Vec<f64>> = Vec::new();
    let mut ref_cache = NetCache::default();
    let mut bridge_cache = NetCache::default();
    let mut dec_in = vec![0.0; params.dec.in_dim()];

    for e in &plan.elems {
        let s = samples.get(e.index).ok_or(CoreError::IndexOutOfBounds {
            context: "run_batch sample index",
            index: e.index,
            len: samples.len(),
        })?;
        if e.z0.len() != d || e.q0.len() != d {
            return Err(CoreError::ContractViolation {
                context: "run_batch: plan pins not filled".to_string(),
            });
        }
        let ids = &s.content_seq;
        if ids.len() != FRAMES {
            return Err(CoreError::ShapeMismatch {
                context: "run_batch content length",
                expected: vec![FRAMES],
                got: vec![ids.len()],
            });
        }

        // Encoder forward; activations kept only when the backbone trains.
        let h = encode_mel(
            &params.ref_enc,
            &s.mel,
            if need_backbone_grads { Some(&mut enc_acts) } else { None },
        )?;
        let post = encode_gaussian(&params.heads, &h)?;
        let kl_e = kl_to_standard_normal(&post);
        let z = reparameterize(&post, &e.eps_z)?;
        let q_st: Vec<f64> = z
            .iter()
            .zip(&e.q0)
            .zip(&e.z0)
            .map(|((zv, q0), z0)| zv + q0 - z0)
            .collect();

        // Decode, memoized per content id (clips repeat one id per frame).
        let mut dec_cols: Vec<Option<Vec<f64>>> = vec![None; ids_count];
        let mut dec_caches: Vec<NetCache> = Vec::new();
        dec_caches.resize_with(ids_count, NetCache::default);
        for &c in ids {
            if c >= ids_count {
                return Err(CoreError::InvalidArgument {
                    context: format!("run_batch: unknown content id {c}"),
                });
            }
            if dec_cols[c].is_none() {
                dec_in[..ed].copy_from_slice(params.embed.row(c));
                dec_in[ed..].copy_from_slice(&q_st);
                params.dec.forward_cached(&dec_in, &mut dec_caches[c])?;
                dec_cols[c] = Some(dec_caches[c].acts.last().unwrap().clone());
            }
        }

        // Reconstruction loss and the gradient on the coarse output, laid
        // out like the mel data (band-major); the condition path may
        // extend it below.
        let mut lrec_e = 0.0;
        let mut coarse_grad: Vec<f64> =
            if need_backbone_grads { vec![0.0; BANDS * FRAMES] } else { Vec::new() };
        for l in 0..FRAMES {
            let col = dec_cols[ids[l]].as_ref().unwrap();
            for f in 0..BANDS {
                let diff = col[f] - s.mel.at(f, l);
                lrec_e += diff * diff;
                if need_backbone_grads {
                    coarse_grad[f * FRAMES + l] = 2.0 * diff / (fl * bf);
                }
            }
        }
        lrec_e /= fl;

        let lq_e = if cfg.use_vq { vq_loss(&z, &e.q0, cfg.gamma, true)? } else { 0.0 };

        // Refiner loss: noise regression per frame, conditioned on the
        // projected whole coarse clip plus frame position.
        let mut lr_e = 0.0;
        if want_refiner {
            let draw = e.refiner_draw.as_ref().ok_or(CoreError::ContractViolation {
                context: "run_batch: plan lacks a refiner draw".to_string(),
            })?;
            let cd = params.cond.w.rows();
            let mut coarse_flat = vec![0.0; BANDS * FRAMES];
            for l in 0..FRAMES {
                let col = dec_cols[ids[l]].as_ref().unwrap();
                for f in 0..BANDS {
                    coarse_flat[f * FRAMES + l] = col[f];
                }
            }
            let mut cond_vec = vec![0.0; cd + POSENC_DIM];
            for o in 0..cd {
                cond_vec[o] = dot(params.cond.w.row(o), &coarse_flat) + params.cond.b.data()[o];
            }
            // The projection is shared by every frame, so its gradient
            // accumulates across frames before touching the parameters.
            let mut proj_grad = vec![0.0; cd];
            let mut x0 = vec![0.0; BANDS];
            let mut epsv = vec![0.0; BANDS];
            for l in 0..FRAMES {
                frame_posenc(l, &mut cond_vec[cd..]);
                for f in 0..BANDS {
                    x0[f] = s.mel.at(f, l);
                    epsv[f] = draw.eps.at(f, l);
                }
                let t = draw.t[l];
                let x_t = q_sample(&x0, t, &epsv, sched_ref)?;
                params.refiner.predict_cached(&x_t, t, Some(&cond_vec), &mut ref_cache)?;
                let pred = ref_cache.acts.last().unwrap();
                let mut frame_loss = 0.0;
                for f in 0..BANDS {
                    let dd = epsv[f] - pred[f];
                    frame_loss += dd * dd;
                }
                lr_e += frame_loss / BANDS as f64;
                if let Some(g) = grads.as_deref_mut() {
                    let grad_pred: Vec<f64> = pred
                        .iter()
                        .zip(&epsv)
                        .map(|(p, ev)| 2.0 * (p - ev) / (fl * bf))
                        .collect();
                    let ig = params.refiner.backward(&ref_cache, &grad_pred, &mut g.refiner)?;
                    let cg = ig.cond.expect("refiner is conditional");
                    // Position features and the corrupted input carry no
                    // parameters.
                    for (acc, d) in proj_grad.iter_mut().zip(&cg[..cd]) {
                        *acc += d;
                    }
                }
            }
            lr_e /= FRAMES as f64;
            if let Some(g) = grads.as_deref_mut() {
                for o in 0..cd {
                    let delta = proj_grad[o];
                    axpy(delta, &coarse_flat, g.cond.w.row_mut(o));
                    g.cond.b.data_mut()[o] += delta;
                    if need_backbone_grads {
                        // One-stage: the refiner loss reaches the decoder
                        // through its output.
                        axpy(delta, params.cond.w.row(o), &mut coarse_grad);
                    }
                }
            }
        }

        // Bridge loss on the pinned latent; gradients stay in the bridge.
        let mut lb_e = 0.0;
        if cfg.use_bridge {
            let draw = e.bridge_draw.as_ref().ok_or(CoreError::ContractViolation {
                context: "run_batch: plan lacks a bridge draw".to_string(),
            })?;
            let x_t = q_sample(&e.z0, draw.t, &draw.eps, sched_bridge)?;
            params.bridge.predict_cached(&x_t, draw.t, None, &mut bridge_cache)?;
            let pred = bridge_cache.acts.last().unwrap();
            for i in 0..d {
                let dd = draw.eps[i] - pred[i];
                lb_e += dd * dd;
            }
            lb_e /= d as f64;
            if let Some(g) = grads.as_deref_mut() {
                let grad_pred: Vec<f64> = pred
                    .iter()
                    .zip(&draw.eps)
                    .map(|(p, ev)| 2.0 * (p - ev) / (d as f64 * bf))
                    .collect();
                params.bridge.backward(&bridge_cache, &grad_pred, &mut g.bridge)?;
            }
        }

        // Backbone backward: decoder → embedding/latent, commitment, the
        // weighted KL path, heads, then the pooled encoder.
        if need_backbone_grads {
            let g = grads.as_deref_mut().unwrap();
            let mut per_id: Vec<Option<Vec<f64>>> = vec![None; ids_count];
            for l in 0..FRAMES {
                let acc = per_id[ids[l]].get_or_insert_with(|| vec![0.0; BANDS]);
                for f in 0..BANDS {
                    acc[f] += coarse_grad[f * FRAMES + l];
                }
            }
            let mut grad_z = vec![0.0; d];
            for c in 0..ids_count {
                if let Some(gsum) = &per_id[c] {
                    let in_grad = params.dec.backward(&dec_caches[c], gsum, &mut g.dec)?;
                    axpy(1.0, &in_grad[..ed], g.embed.row_mut(c));
                    for i in 0..d {
                        grad_z[i] += in_grad[ed + i];
                    }
                }
            }
            if cfg.use_vq {
                // Commitment term, batch-mean scaled.
                for i in 0..d {
                    grad_z[i] += 2.0 * cfg.gamma * (z[i] - e.q0[i]) / bf;
                }
            }
            let sigma = post.sigma();
            let mut grad_mu = vec![0.0; d];
            let mut grad_ls = vec![0.0; d];
            for i in 0..d {
                grad_mu[i] = grad_z[i] + plan.beta * post.mu[i] / bf;
                grad_ls[i] = grad_z[i] * sigma[i] * e.eps_z[i]
                    + plan.beta * (sigma[i] * sigma[i] - 1.0) / bf;
            }
            let mut grad_h = vec![0.0; h.len()];
            encode_gaussian_backward(
                &params.heads,
                &h,
                &grad_mu,
                &grad_ls,
                &mut g.heads,
                &mut grad_h,
            );
            for l in 0..FRAMES {
                let col = s.mel.frame(l);
                let a = &enc_acts[l];
                for o in 0..h.len() {
                    let delta = grad_h[o] / FRAMES as f64 * (1.0 - a[o] * a[o]);
                    axpy(delta, &col, g.ref_enc.w.row_mut(o));
                    g.ref_enc.b.data_mut()[o] += delta;
                }
            }
        }

        totals.l_rec += lrec_e / bf;
        totals.kl += kl_e / bf;
        totals.l_q += lq_e / bf;
        totals.l_r += lr_e / bf;
        totals.l_b += lb_e / bf;
    }
    Ok(totals)
}

/// Everything one run owns: parameters, codebook, controller, optimizers,
/// schedules, the step counter and the draw stream.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cfg: PipelineConfig,
    pub params: PipelineParams,
    pub codebook: Codebook,
    pub controller: ControllerState,
    pub anneal: AnnealSchedule,
    pub opt_backbone: AdamState,
    pub opt_refine: AdamState,
    pub opt_bridge: AdamState,
    /// Smoothed KL the controller reacts to; None until the first batch.
    pub kl_ema: Option<f64>,
    pub step: u64,
    pub rng: RngStream,
    pub sched_refiner: DiffusionSchedule,
    pub sched_bridge: DiffusionSchedule,
}

/// Smoothing factor for the controller's KL observation.
pub const KL_EMA_DECAY: f64 = 0.99;

impl TrainState {
    /// Fresh state for a configuration. The parameter stream is tagged so
    /// it never collides with the dataset stream built from the raw seed.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RngStream::new(cfg.seed ^ 0x7061_7261_6d73);
        let params = PipelineParams::new(&cfg, &mut rng)?;
        let codebook = Codebook::new(cfg.codebook_size, cfg.latent_dim, &mut rng)?;
        let controller =
            ControllerState::new(cfg.kp, cfg.ki, cfg.beta_min, cfg.beta_max, cfg.kl_target)?;
        let anneal = AnnealSchedule { ramp: cfg.ramp };
        let named = params.named();
        let template = |group: ParamGroup| -> Vec<(String, &Array)> {
            named
                .iter()
                .filter(|(n, _)| param_group(n) == group)
                .map(|(n, a)| (n.clone(), *a))
                .collect()
        };
        let opt_backbone = AdamState::new(cfg.lr, &template(ParamGroup::Backbone));
        let opt_refine = AdamState::new(cfg.lr, &template(ParamGroup::Refine));
        let opt_bridge = AdamState::new(cfg.lr, &template(ParamGroup::Bridge));
        drop(named);
        let sched_refiner = default_schedule(cfg.t_refiner)?;
        let sched_bridge = default_schedule(cfg.t_bridge)?;
        Ok(TrainState {
            cfg,
            params,
            codebook,
            controller,
            anneal,
            opt_backbone,
            opt_refine,
            opt_bridge,
            kl_ema: None,
            step: 0,
            rng,
            sched_refiner,
            sched_bridge,
        })
    }
}

/// Loss bookkeeping for one step. `z_batch` carries the step's sampled
/// latents, detached, for the alternating bridge update.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub l_rec: f64,
    pub kl: f64,
    pub beta: f64,
    pub l_q: f64,
    pub l_r: f64,
    pub l_b: f64,
    pub l_all: f64,
    pub kl_ema: f64,
    pub z_batch: Vec<Vec<f64>>,
}

fn apply_group(
    opt: &mut AdamState,
    params: &mut PipelineParams,
    grads: &PipelineGrads,
    group: ParamGroup,
) -> Result<()> {
    let mut p: Vec<(String, &mut Array)> = params
        .named_mut()
        .into_iter()
        .filter(|(n, _)| param_group(n) == group)
        .collect();
    let g: Vec<(String, &Array)> = grads
        .named()
        .into_iter()
        .filter(|(n, _)| param_group(n) == group)
        .collect();
    adam_step(opt, &mut p, &g)
}

/// One optimization step in the configured mode: draw, pin, observe KL,
/// set the weight, evaluate, verify the freeze contract, update the
/// trainable groups, and let the codebook follow the batch.
pub fn train_step(state: &mut TrainState, data: &ToyDataset) -> Result<LossRecord> {
    let train = data.train();
    // During the warmup the step behaves exactly like a use_vq=false run;
    // the draw stream is unaffected, so the switch is invisible to replay.
    let mut step_cfg = state.cfg.clone();
    step_cfg.use_vq = state.cfg.use_vq && state.step >= state.cfg.vq_warmup;
    let mut plan = draw_plan(&step_cfg, &mut state.rng, train.len())?;
    let kl_obs = fill_pins(&state.params, &state.codebook, &step_cfg, train, &mut plan)?;
    let ema = match state.kl_ema {
        None => kl_obs,
        Some(prev) => KL_EMA_DECAY * prev + (1.0 - KL_EMA_DECAY) * kl_obs,
    };
    state.kl_ema = Some(ema);
    let beta = if state.cfg.use_controlvae {
        pi_beta_update(&mut state.controller, ema)?
    } else {
        anneal_weight(&state.anneal, state.step)
    };
    plan.beta = beta;

    let mut grads = PipelineGrads::zeros(&state.params);
    let losses = run_batch(
        &state.params,
        train,
        &plan,
        &step_cfg,
        &state.sched_refiner,
        &state.sched_bridge,
        Some(&mut grads),
    )?;

    let mode = state.cfg.mode;
    let frozen: &[ParamGroup] = match mode {
        Mode::TwoStageS2 => &[ParamGroup::Backbone],
        Mode::Vaefs | Mode::TwoStageS1 => &[ParamGroup::Refine],
        Mode::OneStage => &[],
    };
    for &group in frozen {
        if let Some(name) = grads.nonzero_in(group) {
            return Err(CoreError::ContractViolation {
                context: format!(
                    "gradient reached frozen parameter {name} in mode {}",
                    mode.name()
                ),
            });
        }
    }

    if mode.trains_backbone() {
        apply_group(&mut state.opt_backbone, &mut state.params, &grads, ParamGroup::Backbone)?;
    }
    if mode.has_refiner_loss() {
        apply_group(&mut state.opt_refine, &mut state.params, &grads, ParamGroup::Refine)?;
    }
    if step_cfg.use_vq && mode.trains_backbone() {
        let zs: Vec<&[f64]> = plan.elems.iter().map(|e| e.z0.as_slice()).collect();
        let codes: Vec<usize> = plan.elems.iter().map(|e| e.code).collect();
        ema_update(&mut state.codebook, &zs, &codes)?;
    }
    state.step += 1;
    Ok(LossRecord {
        step: state.step,
        l_rec: losses.l_rec,
        kl: losses.kl,
        beta,
        l_q: losses.l_q,
        l_r: losses.l_r,
        l_b: losses.l_b,
        l_all: losses.total(beta),
        kl_ema: ema,
        z_batch: plan.elems.into_iter().map(|e| e.z0).collect(),
    })
}

/// Trains the bridge on detached latent samples. The denoiser sees only
/// values; no gradient path into the encoder exists, and nothing outside
/// the bridge group is touched.
pub fn bridge_train_step(state: &mut TrainState, z_batch: &[Vec<f64>]) -> Result<f64> {
    if !state.cfg.use_bridge {
        return Err(CoreError::InvalidArgument {
            context: "bridge_train_step: the bridge is disabled by configuration".to_string(),
        });
    }
    if z_batch.is_empty() {
        return Err(CoreError::InvalidArgument {
            context: "bridge_train_step: empty latent batch".to_string(),
        });
    }
    let d = state.cfg.latent_dim;
    let bf = z_batch.len() as f64;
    let mut g = state.params.bridge.net.zeros_like();
    let mut cache = NetCache::default();
    let mut loss = 0.0;
    for z in z_batch {
        if z.len() != d {
            return Err(CoreError::ShapeMismatch {
                context: "bridge_train_step latent",
                expected: vec![d],
                got: vec![z.len()],
            });
        }
        let t = state.rng.uniform_usize(state.cfg.t_bridge) + 1;
        let eps = state.rng.normal_vec(d);
        let x_t = q_sample(z, t, &eps, &state.sched_bridge)?;
        state.params.bridge.predict_cached(&x_t, t, None, &mut cache)?;
        let pred = cache.acts.last().unwrap();
        let mut le = 0.0;
        for i in 0..d {
            let dd = eps[i] - pred[i];
            le += dd * dd;
        }
        loss += le / (d as f64 * bf);
        let grad_pred: Vec<f64> =
            pred.iter().zip(&eps).map(|(p, ev)| 2.0 * (p - ev) / (d as f64 * bf)).collect();
        state.params.bridge.backward(&cache, &grad_pred, &mut g)?;
    }
    let mut p = state.params.bridge.net.named_tensors_mut("bridge");
    let gt = g.named_tensors("bridge");
    adam_step(&mut state.opt_bridge, &mut p, &gt)?;
    Ok(loss)
}

/// Where the style latent comes from at inference.
#[derive(Debug, Clone, Copy)]
pub enum StyleSource<'a> {
    /// Posterior mean of a reference clip (deterministic transfer).
    Reference(&'a ToyMel),
    /// Ancestral sample from the diffusion bridge; never touches the
    /// reference encoder.
    Bridge,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub refined: ToyMel,
    pub coarse: ToyMel,
    pub z: Vec<f64>,
    pub q: Vec<f64>,
    pub code: usize,
}

/// Ancestral sampling of every frame, conditioned on the projected whole
/// coarse clip plus frame position — the training-time conditioning.
fn refine_clip(
    params: &PipelineParams,
    coarse: &Array,
    sched: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<Array> {
    let cd = params.cond.w.rows();
    let mut cond_vec = vec![0.0; cd + POSENC_DIM];
    for o in 0..cd {
        cond_vec[o] = dot(params.cond.w.row(o), coarse.data()) + params.cond.b.data()[o];
    }
    let mut out = Array::zeros(vec![BANDS, coarse.cols()]);
    for l in 0..coarse.cols() {
        frame_posenc(l, &mut cond_vec[cd..]);
        let x = diffusion::sample(&params.refiner, BANDS, Some(&cond_vec), sched, rng)?;
        for (f, v) in x.iter().enumerate() {
            *out.at_mut(f, l) = *v;
        }
    }
    Ok(out)
}

/// Quantize → decode → refine for a given latent, with a caller-fixed
/// noise seed so equal latents give bitwise-equal clips.
fn synth_latent(
    state: &TrainState,
    z: &[f64],
    content: &[usize],
    seed: u64,
) -> Result<ToyMel> {
    let q = if state.cfg.use_vq { nearest_code(&state.codebook, z)?.0 } else { z.to_vec() };
    let raw = acoustic_decode(&state.params, content, &q)?;
    let refined = if state.cfg.mode.has_refiner_loss() {
        let mut rng = RngStream::new(seed);
        refine_clip(&state.params, &raw, &state.sched_refiner, &mut rng)?
    } else {
        raw
    };
    ToyMel::from_raw_clamped(refined)
}

/// Full inference path: style latent from the chosen source, quantization,
/// coarse decode, then diffusion refinement (modes without a trained
/// refiner return the coarse clip twice).
pub fn synthesize(
    state: &TrainState,
    content: &[usize],
    style: StyleSource,
    rng: &mut RngStream,
) -> Result<SynthOutput> {
    if state.step == 0 {
        return Err(CoreError::ContractViolation {
            context: "synthesize: the model has not taken a training step".to_string(),
        });
    }
    let z = match style {
        StyleSource::Reference(mel) => {
            let h = reference_encode(&state.params, mel)?;
            encode_gaussian(&state.params.heads, &h)?.mu
        }
        StyleSource::Bridge => {
            if !state.cfg.use_bridge {
                return Err(CoreError::InvalidArgument {
                    context: "synthesize: bridge sampling is disabled by configuration"
                        .to_string(),
                });
            }
            diffusion::sample(
                &state.params.bridge,
                state.cfg.latent_dim,
                None,
                &state.sched_bridge,
                rng,
            )?
        }
    };
    let (q, code) =
        if state.cfg.use_vq { nearest_code(&state.codebook, &z)? } else { (z.clone(), 0) };
    let raw = acoustic_decode(&state.params, content, &q)?;
    let refined_raw = if state.cfg.mode.has_refiner_loss() {
        refine_clip(&state.params, &raw, &state.sched_refiner, rng)?
    } else {
        raw.clone()
    };
    Ok(SynthOutput {
        refined: ToyMel::from_raw_clamped(refined_raw)?,
        coarse: ToyMel::from_raw_clamped(raw)?,
        z,
        q,
        code,
    })
}

/// Decodes one clip per traversal value, overwriting coordinate `dim` of
/// the base latent. Every value reuses the same sampling noise, so equal
/// values give bitwise-equal clips and the sweep varies only through the
/// latent.
pub fn traverse_latent(
    state: &TrainState,
    base: &[f64],
    dim: usize,
    values: &[f64],
    content: &[usize],
    seed: u64,
) -> Result<Vec<ToyMel>> {
    let d = state.cfg.latent_dim;
    if base.len() != d {
        return Err(CoreError::ShapeMismatch {
            context: "traverse_latent base",
            expected: vec![d],
            got: vec![base.len()],
        });
    }
    if dim >= d {
        return Err(CoreError::IndexOutOfBounds {
            context: "traverse_latent dim",
            index: dim,
            len: d,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite { context: "traverse_latent values".to_string() });
    }
    let mut out = Vec::with_capacity(values.len());
    let mut z = base.to_vec();
    for &v in values {
        z[dim] = v;
        out.push(synth_latent(state, &z, content, seed)?);
    }
    Ok(out)
}

/// Adapter exposing a trained state to the traversal scorer. All synthesis
/// uses one fixed noise seed so factor changes come from the latent alone.
pub struct TrainedSynth<'a> {
    pub state: &'a TrainState,
    pub seed: u64,
}

impl LatentSynth for TrainedSynth<'_> {
    fn latent_dim(&self) -> usize {
        self.state.cfg.latent_dim
    }

    fn encode_mean(&self, mel: &ToyMel) -> Result<Vec<f64>> {
        let h = reference_encode(&self.state.params, mel)?;
        Ok(encode_gaussian(&self.state.params.heads, &h)?.mu)
    }

    fn synth_from_latent(&self, z: &[f64], content: usize) -> Result<ToyMel> {
        if content >= CONTENT_VOCAB {
            return Err(CoreError::InvalidArgument {
                context: format!("synth_from_latent: unknown content id {content}"),
            });
        }
        synth_latent(self.state, z, &vec![content; FRAMES], self.seed)
    }
}
