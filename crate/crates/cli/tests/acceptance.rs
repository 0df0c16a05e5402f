//! End-to-end acceptance battery. Each test prints one PASS/FAIL line with
//! the measured numbers (visible under `--nocapture`, or on failure) and
//! asserts the same condition, so the harness summary mirrors the printed
//! lines. Tests run in name order on one thread; expensive fixtures are
//! trained once and shared through `OnceLock`.

use melstyle_cli::checkpoint::{load_state, save_state};
use melstyle_cli::commands;
use melstyle_cli::config::RunMode;
use melstyle_core::diffusion::{default_schedule, make_schedule, q_sample, sample, Denoiser};
use melstyle_core::evalmetrics::{
    exclusivity_score, fit_gaussian, frechet_distance, mcd, mel_features, ExclusivityReport,
    FACTOR_NAMES,
};
use melstyle_core::numerics::{adam_step, finite_diff_check, AdamState, Array, RngStream};
use melstyle_core::pipeline::{
    bridge_train_step, draw_plan, fill_pins, run_batch, synthesize, train_step, BatchLosses, Mode,
    PipelineConfig, PipelineGrads, StepPlan, StyleSource, TrainState, TrainedSynth,
};
use melstyle_core::quantizer::{
    ema_update, nearest_code, straight_through, straight_through_backward, Codebook,
};
use melstyle_core::toydata::{estimate_factors, make_dataset, ToyDataset, ToyMel, ToySample};
use melstyle_core::vae::{encode_gaussian, reparameterize};
use std::sync::OnceLock;
use std::time::Instant;

const GRAD_TOL: f64 = 1e-4;
const KL_WINDOW: f64 = 0.3;
const KL_TAIL_STEPS: u64 = 2_000;
const TRANSFER_PAIRS: usize = 200;
const TRANSFER_MIN_HITS: usize = 140;
const BRIDGE_SAMPLES: usize = 5_000;
const POSTERIOR_DRAWS_PER_CLIP: usize = 12;
const BRIDGE_REFINE_STEPS: usize = 4_000;
const TV_BOUND: f64 = 0.15;
const R_MIN: f64 = 0.6;
const EXCL_MIN: f64 = 0.5;
const GRID_SEEDS: [u64; 3] = [21, 22, 23];
const GRID_STEPS: u64 = 6_000;
const GRID_DATASET: usize = 200;
const GRID_BATCH: usize = 8;

fn report(tag: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] {verdict}: {detail}");
    assert!(ok, "[{tag}] FAIL: {detail}");
}

// ---------------------------------------------------------------- fixtures

struct DeskRun {
    state: TrainState,
    data: ToyDataset,
    betas: Vec<f64>,
    kl_emas: Vec<f64>,
    train_secs: f64,
}

/// Trains to the config's step budget with a bridge update after every
/// pipeline step, the same loop the `train` command runs. Two-stage runs
/// switch to the frozen-backbone stage at the 60/40 split.
fn train_to_budget(state: &mut TrainState, run: RunMode, data: &ToyDataset) -> (Vec<f64>, Vec<f64>) {
    let total = state.cfg.steps;
    let (s1, _) = melstyle_cli::config::two_stage_split(total);
    let mut betas = Vec::with_capacity(total as usize);
    let mut kl_emas = Vec::with_capacity(total as usize);
    while state.step < total {
        if run == RunMode::TwoStage {
            state.cfg.mode = if state.step < s1 { Mode::TwoStageS1 } else { Mode::TwoStageS2 };
        }
        let rec = train_step(state, data).unwrap();
        if state.cfg.use_bridge {
            bridge_train_step(state, &rec.z_batch).unwrap();
        }
        betas.push(rec.beta);
        kl_emas.push(rec.kl_ema);
    }
    (betas, kl_emas)
}

/// Bridge-only refinement against the frozen posterior — the same loop the
/// `bridge-train` command runs after main training, which re-points the
/// bridge at where the codes ended up.
fn bridge_refine(state: &mut TrainState, data: &ToyDataset, steps: usize) {
    for _ in 0..steps {
        let mut plan = draw_plan(&state.cfg, &mut state.rng, data.train().len()).unwrap();
        fill_pins(&state.params, &state.codebook, &state.cfg, data.train(), &mut plan).unwrap();
        let z_batch: Vec<Vec<f64>> = plan.elems.iter().map(|e| e.z0.clone()).collect();
        bridge_train_step(state, &z_batch).unwrap();
    }
}

fn desk_run(mode: Mode, run: RunMode) -> DeskRun {
    let cfg = PipelineConfig::desk_default(mode);
    let data = make_dataset(cfg.dataset_n, cfg.seed).unwrap();
    let mut state = TrainState::new(cfg).unwrap();
    let start = Instant::now();
    let (betas, kl_emas) = train_to_budget(&mut state, run, &data);
    let train_secs = start.elapsed().as_secs_f64();
    if state.cfg.use_bridge {
        bridge_refine(&mut state, &data, BRIDGE_REFINE_STEPS);
    }
    DeskRun { state, data, betas, kl_emas, train_secs }
}

fn one_stage() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| desk_run(Mode::OneStage, RunMode::Single(Mode::OneStage)))
}

fn two_stage() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| desk_run(Mode::TwoStageS1, RunMode::TwoStage))
}

struct GridRun {
    seed: u64,
    config: &'static str,
    fd: f64,
    /// Kept for the full configuration, whose latents the traversal
    /// criterion inspects.
    state: Option<TrainState>,
}

fn grid_cfg(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::desk_default(Mode::OneStage);
    cfg.seed = seed;
    cfg.dataset_n = GRID_DATASET;
    cfg.steps = GRID_STEPS;
    cfg.batch = GRID_BATCH;
    // Keep the anneal fallback proportional to the shorter run.
    cfg.ramp = GRID_STEPS / 2;
    cfg
}

/// Twelve reduced-scale runs: {3 seeds} x {full + three single-component
/// ablations}, each scored by generation Fréchet distance on its test split.
fn ablation_grid() -> &'static Vec<GridRun> {
    static GRID: OnceLock<Vec<GridRun>> = OnceLock::new();
    GRID.get_or_init(|| {
        let variants: [(&'static str, fn(&mut PipelineConfig)); 4] = [
            ("full", |_| {}),
            ("w/o ControlVAE", |c| c.use_controlvae = false),
            ("w/o VQ", |c| c.use_vq = false),
            ("w/o Diffusion Bridge", |c| c.use_bridge = false),
        ];
        let mut runs = Vec::with_capacity(12);
        for &seed in &GRID_SEEDS {
            for (config, tweak) in variants {
                let mut cfg = grid_cfg(seed);
                tweak(&mut cfg);
                let data = make_dataset(cfg.dataset_n, cfg.seed).unwrap();
                let mut state = TrainState::new(cfg).unwrap();
                train_to_budget(&mut state, RunMode::Single(Mode::OneStage), &data);
                let fd = commands::generation_fd(&state, &data, seed).unwrap();
                let keep = config == "full";
                runs.push(GridRun { seed, config, fd, state: keep.then_some(state) });
            }
        }
        runs
    })
}

// ----------------------------------------------------------------- helpers

fn mse(a: &ToyMel, b: &ToyMel) -> f64 {
    let (x, y) = (a.mat().data(), b.mat().data());
    x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64
}

fn feature_set(mels: &[ToyMel]) -> Vec<Vec<f64>> {
    mels.iter().map(|m| mel_features(m).unwrap()).collect()
}

fn set_fd(generated: &[ToyMel], targets: &[ToyMel]) -> f64 {
    frechet_distance(
        &fit_gaussian(&feature_set(generated)).unwrap(),
        &fit_gaussian(&feature_set(targets)).unwrap(),
    )
    .unwrap()
}

/// Reconstructs every test clip from its own reference style, returning the
/// refined and coarse renderings side by side.
fn reconstruct_test_set(run: &DeskRun, seed: u64) -> (Vec<ToyMel>, Vec<ToyMel>, Vec<ToyMel>) {
    let mut rng = RngStream::new(seed);
    let (mut refined, mut coarse, mut targets) = (Vec::new(), Vec::new(), Vec::new());
    for s in run.data.test() {
        let out = synthesize(&run.state, &s.content_seq, StyleSource::Reference(&s.mel), &mut rng)
            .unwrap();
        refined.push(out.refined);
        coarse.push(out.coarse);
        targets.push(s.mel.clone());
    }
    (refined, coarse, targets)
}

fn sample_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

// ------------------------------------------------- 1. gradient suite

struct GradSetup {
    state: TrainState,
    samples: Vec<ToySample>,
    plan: StepPlan,
}

fn doll_cfg(mode: Mode) -> PipelineConfig {
    let mut c = PipelineConfig::desk_default(mode);
    c.latent_dim = 4;
    c.codebook_size = 8;
    // T must stay above 20 to keep the rescaled beta_end below 1.
    c.t_refiner = 25;
    c.t_bridge = 25;
    c.batch = 2;
    c.dataset_n = 12;
    c.enc_dim = 6;
    c.embed_dim = 5;
    c.cond_proj_dim = 2;
    c.dec_hidden = 7;
    c.ref_hidden = 5;
    c.bridge_hidden = 8;
    c.seed = 11;
    c
}

fn grad_setup() -> GradSetup {
    // The plan is drawn under the superset config (refiner loss present,
    // bridge enabled) so every variant below can reuse the same pins.
    let mut cfg = doll_cfg(Mode::OneStage);
    cfg.gamma = 1.0;
    let data = make_dataset(cfg.dataset_n, cfg.seed).unwrap();
    let samples = data.train().to_vec();
    let mut state = TrainState::new(cfg).unwrap();
    let mut plan = draw_plan(&state.cfg, &mut state.rng, samples.len()).unwrap();
    fill_pins(&state.params, &state.codebook, &state.cfg, &samples, &mut plan).unwrap();
    GradSetup { state, samples, plan }
}

fn full_grad(setup: &mut GradSetup, cfg: &PipelineConfig, beta: f64) -> Vec<f64> {
    setup.plan.beta = beta;
    let mut g = PipelineGrads::zeros(&setup.state.params);
    run_batch(
        &setup.state.params,
        &setup.samples,
        &setup.plan,
        cfg,
        &setup.state.sched_refiner,
        &setup.state.sched_bridge,
        Some(&mut g),
    )
    .unwrap();
    g.flatten()
}

/// Finite-difference sweep of one loss component over the full parameter
/// vector (or a sub-vector scattered into fixed positions).
fn fd_sweep(
    setup: &mut GradSetup,
    cfg: &PipelineConfig,
    beta: f64,
    pick: impl Fn(&BatchLosses) -> f64,
    analytic: &[f64],
    positions: Option<&[usize]>,
) -> f64 {
    setup.plan.beta = beta;
    let base_flat = setup.state.params.flatten();
    let spans = setup.state.params.spans();
    let mut scratch = setup.state.params.clone();
    let mut scratch_flat = base_flat.clone();

    let (probe, probe_spans, probe_analytic): (Vec<f64>, Vec<(String, usize)>, Vec<f64>) =
        match positions {
            None => (base_flat.clone(), spans.clone(), analytic.to_vec()),
            Some(pos) => {
                let mut sub_spans = Vec::new();
                let mut off = 0usize;
                for (name, len) in &spans {
                    let inside = pos.iter().filter(|&&p| p >= off && p < off + len).count();
                    if inside > 0 {
                        sub_spans.push((name.clone(), inside));
                    }
                    off += len;
                }
                (
                    pos.iter().map(|&p| base_flat[p]).collect(),
                    sub_spans,
                    pos.iter().map(|&p| analytic[p]).collect(),
                )
            }
        };

    let plan = &setup.plan;
    let samples = &setup.samples;
    let sched_r = &setup.state.sched_refiner;
    let sched_b = &setup.state.sched_bridge;
    let f = |flat: &[f64]| {
        match positions {
            None => scratch_flat.copy_from_slice(flat),
            Some(pos) => {
                scratch_flat.copy_from_slice(&base_flat);
                for (v, &p) in flat.iter().zip(pos) {
                    scratch_flat[p] = *v;
                }
            }
        }
        scratch.unflatten_from(&scratch_flat)?;
        let losses = run_batch(&scratch, samples, plan, cfg, sched_r, sched_b, None)?;
        Ok(pick(&losses))
    };
    let rep = finite_diff_check(f, &probe, &probe_analytic, &probe_spans, GRAD_TOL).unwrap();
    assert!(
        rep.passed,
        "gradient sweep failed at {}[{}]: rel err {:.3e}",
        rep.worst_name, rep.worst_coord, rep.max_rel_err
    );
    rep.max_rel_err
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[test]
fn c01_every_loss_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut setup = grad_setup();

    let one_g1 = setup.state.cfg.clone();
    let mut vae = one_g1.clone();
    vae.mode = Mode::Vaefs;
    let mut vae_nb = vae.clone();
    vae_nb.use_bridge = false;
    let mut vae_nb_g05 = vae_nb.clone();
    vae_nb_g05.gamma = 0.5;
    let mut s2 = one_g1.clone();
    s2.mode = Mode::TwoStageS2;
    let mut full = one_g1.clone();
    full.gamma = 0.25;

    // Analytic per-term gradients from exact linear combinations of the
    // objective gradient: beta scales only the KL path, gamma scales only
    // the commitment sum, the mode toggles only the refiner loss and the
    // bridge flag only the bridge loss — with one shared plan the forward
    // passes are otherwise identical.
    let g_one_b1 = full_grad(&mut setup, &one_g1, 1.0);
    let g_one_b0 = full_grad(&mut setup, &one_g1, 0.0);
    let g_vae = full_grad(&mut setup, &vae, 0.0);
    let g_vae_nb = full_grad(&mut setup, &vae_nb, 0.0);
    let g_vae_nb_g05 = full_grad(&mut setup, &vae_nb_g05, 0.0);
    let g_s2 = full_grad(&mut setup, &s2, 0.0);
    let g_full = full_grad(&mut setup, &full, 0.7);

    let grad_kl = sub(&g_one_b1, &g_one_b0);
    let grad_commit: Vec<f64> = sub(&g_vae_nb, &g_vae_nb_g05).iter().map(|v| v * 2.0).collect();
    let grad_rec = sub(&g_vae_nb, &grad_commit);
    let grad_refine = sub(&g_one_b0, &g_vae);
    let grad_bridge = sub(&g_vae, &g_vae_nb);

    let e_kl = fd_sweep(&mut setup, &one_g1, 0.0, |l| l.kl, &grad_kl, None);
    let e_q = fd_sweep(&mut setup, &vae_nb, 0.0, |l| l.l_q, &grad_commit, None);
    let e_rec = fd_sweep(&mut setup, &vae_nb, 0.0, |l| l.l_rec, &grad_rec, None);
    let e_r = fd_sweep(&mut setup, &one_g1, 0.0, |l| l.l_r, &grad_refine, None);
    let e_b = fd_sweep(&mut setup, &vae, 0.0, |l| l.l_b, &grad_bridge, None);

    // The frozen-backbone stage stops the condition input's gradient, so its
    // refiner objective is checked over the coordinates it actually trains.
    let spans = setup.state.params.spans();
    let mut refine_pos = Vec::new();
    let mut off = 0usize;
    for (name, len) in &spans {
        if name.starts_with("refiner") || name.starts_with("cond") {
            refine_pos.extend(off..off + len);
        }
        off += len;
    }
    let e_s2 = fd_sweep(&mut setup, &s2, 0.0, |l| l.l_r, &g_s2, Some(&refine_pos));

    let e_all = fd_sweep(&mut setup, &full, 0.7, |l| l.total(0.7), &g_full, None);

    let secs = start.elapsed().as_secs_f64();
    let worst = [e_rec, e_kl, e_q, e_r, e_s2, e_b, e_all]
        .into_iter()
        .fold(0.0f64, f64::max);
    report(
        "c01 gradient-suite",
        worst <= GRAD_TOL && secs < 60.0,
        &format!(
            "max rel err {worst:.2e} (L_rec {e_rec:.1e}, KL {e_kl:.1e}, L_Q {e_q:.1e}, \
             L_R {e_r:.1e}, L_R frozen-backbone {e_s2:.1e}, L_B {e_b:.1e}, L_All {e_all:.1e}) \
             at tol {GRAD_TOL:.0e}; {secs:.1}s < 60s"
        ),
    );
}

// ------------------------------------------ 2. diffusion correctness

#[test]
fn c02_forward_variance_and_scalar_sampler_recover_their_targets() {
    let start = Instant::now();

    // (a) Iterated noising chain vs the closed form the shortcut applies.
    let sched = make_schedule(10, 1e-4, 0.02).unwrap();
    let x0 = 1.3;
    let mut rng = RngStream::new(20_260_816);
    let chains = 10_000;
    let finals: Vec<f64> = (0..chains)
        .map(|_| {
            let mut x = x0;
            for t in 1..=10 {
                x = (1.0 - sched.beta(t)).sqrt() * x + sched.beta(t).sqrt() * rng.normal();
            }
            x
        })
        .collect();
    let (_, mc_var) = sample_var(&finals);
    let noise_coeff = q_sample(&[0.0], 10, &[1.0], &sched).unwrap()[0];
    let closed_var = noise_coeff * noise_coeff;
    let var_rel = (mc_var - closed_var).abs() / closed_var;

    // (b) A scalar denoiser trained on N(2, 0.25) must put its samples back
    // on that Gaussian.
    let sched50 = default_schedule(50).unwrap();
    let mut den = Denoiser::new(1, None, &[48], &mut rng).unwrap();
    let mut opt = AdamState::new(1e-3, &den.net.named_tensors("den"));
    let batch = 32;
    for _ in 0..15_000 {
        let mut grads = den.net.zeros_like();
        let mut cache = melstyle_core::numerics::NetCache::default();
        for _ in 0..batch {
            let x0 = [2.0 + 0.5 * rng.normal()];
            let t = rng.uniform_usize(50) + 1;
            let eps = [rng.normal()];
            let x_t = q_sample(&x0, t, &eps, &sched50).unwrap();
            den.predict_cached(&x_t, t, None, &mut cache).unwrap();
            let pred = cache.acts.last().unwrap()[0];
            let grad_pred = [2.0 * (pred - eps[0]) / batch as f64];
            den.backward(&cache, &grad_pred, &mut grads).unwrap();
        }
        let grad_list = grads.named_tensors("den");
        let mut param_list = den.net.named_tensors_mut("den");
        adam_step(&mut opt, &mut param_list, &grad_list).unwrap();
    }
    let draws: Vec<f64> =
        (0..10_000).map(|_| sample(&den, 1, None, &sched50, &mut rng).unwrap()[0]).collect();
    let (mean, var) = sample_var(&draws);
    let std = var.sqrt();

    let secs = start.elapsed().as_secs_f64();
    let ok = var_rel <= 0.05 && (1.9..=2.1).contains(&mean) && (0.4..=0.6).contains(&std) && secs < 300.0;
    report(
        "c02 diffusion-correctness",
        ok,
        &format!(
            "chain var {mc_var:.5} vs closed {closed_var:.5} (rel {var_rel:.3} <= 0.05); \
             sampler mean {mean:.3} in [1.9, 2.1], std {std:.3} in [0.4, 0.6]; {secs:.1}s < 300s"
        ),
    );
}

// --------------------------------------- 3. controller convergence

#[test]
fn c03_controller_holds_smoothed_kl_at_the_setpoint() {
    let run = one_stage();
    let cfg = &run.state.cfg;
    let total = cfg.steps;
    let tail_from = (total - KL_TAIL_STEPS) as usize;

    let tail = &run.kl_emas[tail_from..];
    let (tail_min, tail_max) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let kl_ok = tail.iter().all(|v| (v - cfg.kl_target).abs() <= KL_WINDOW);
    let beta_ok = run.betas.iter().all(|b| (cfg.beta_min..=cfg.beta_max).contains(b));
    let time_ok = run.train_secs < 900.0;

    report(
        "c03 controller-convergence",
        kl_ok && beta_ok && time_ok,
        &format!(
            "smoothed KL in [{tail_min:.3}, {tail_max:.3}] over final {KL_TAIL_STEPS} steps \
             (target {} +/- {KL_WINDOW}); beta within [{}, {}] for all {total} steps: {beta_ok}; \
             train {:.1}s < 900s",
            cfg.kl_target, cfg.beta_min, cfg.beta_max, run.train_secs
        ),
    );
}

// --------------------------------------------- 4. quantizer suite

#[test]
fn c04_quantizer_nearest_straight_through_and_ema_fixed_point() {
    let mut rng = RngStream::new(404);

    // Nearest entry agrees with a brute-force scan, tie-break to the lowest
    // index, on 1000 random queries.
    let book = Codebook::new(64, 8, &mut rng).unwrap();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let z = rng.normal_vec(8);
        let (q, idx) = nearest_code(&book, &z).unwrap();
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for k in 0..book.len() {
            let d: f64 = book.entry(k).iter().zip(&z).map(|(e, v)| (e - v) * (e - v)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        if idx != best || q != book.entry(best).to_vec() {
            mismatches += 1;
        }
    }

    // Straight-through: forward equals the quantized vector bitwise and the
    // backward pass copies the output gradient bitwise.
    let z = rng.normal_vec(8);
    let (q, _) = nearest_code(&book, &z).unwrap();
    let st = straight_through(&z, &q).unwrap();
    let st_forward_ok = st == q;
    let g: Vec<f64> = rng.normal_vec(8);
    let st_backward_ok = straight_through_backward(&g) == g;

    // EMA fixed point: stationary clustered batches drive every entry to its
    // cluster mean.
    let mut small = Codebook::new(8, 4, &mut rng).unwrap();
    let mut zs_store: Vec<Vec<f64>> = Vec::new();
    let mut indices = Vec::new();
    for k in 0..8 {
        let center = small.entry(k).to_vec();
        for _ in 0..8 {
            let v: Vec<f64> = center.iter().map(|c| c + 0.05 * rng.normal()).collect();
            zs_store.push(v);
        }
    }
    for z in &zs_store {
        indices.push(nearest_code(&small, z).unwrap().1);
    }
    let zs: Vec<&[f64]> = zs_store.iter().map(Vec::as_slice).collect();
    for _ in 0..1000 {
        ema_update(&mut small, &zs, &indices).unwrap();
    }
    let mut worst_gap = 0.0f64;
    for k in 0..8 {
        let members: Vec<&Vec<f64>> = zs_store
            .iter()
            .zip(&indices)
            .filter(|(_, &i)| i == k)
            .map(|(z, _)| z)
            .collect();
        assert!(!members.is_empty(), "cluster {k} lost all members");
        for j in 0..4 {
            let mean: f64 = members.iter().map(|z| z[j]).sum::<f64>() / members.len() as f64;
            worst_gap = worst_gap.max((small.entry(k)[j] - mean).abs());
        }
    }

    let ok = mismatches == 0 && st_forward_ok && st_backward_ok && worst_gap <= 1e-3;
    report(
        "c04 quantizer-suite",
        ok,
        &format!(
            "nearest-code mismatches {mismatches}/1000; straight-through forward bitwise \
             {st_forward_ok}, backward bitwise {st_backward_ok}; EMA fixed-point gap \
             {worst_gap:.2e} <= 1e-3 after 1000 stationary updates"
        ),
    );
}

// ------------------------------------- 5. refiner improves the output

#[test]
fn c05_refined_output_beats_coarse_in_both_modes() {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, run, seed) in [("one-stage", one_stage(), 51u64), ("two-stage", two_stage(), 52)] {
        let (refined, coarse, targets) = reconstruct_test_set(run, seed);
        let fd_refined = set_fd(&refined, &targets);
        let fd_coarse = set_fd(&coarse, &targets);
        let mse_refined: f64 =
            refined.iter().zip(&targets).map(|(a, b)| mse(a, b)).sum::<f64>() / targets.len() as f64;
        let mse_coarse: f64 =
            coarse.iter().zip(&targets).map(|(a, b)| mse(a, b)).sum::<f64>() / targets.len() as f64;
        ok &= fd_refined < fd_coarse && mse_refined <= mse_coarse;
        lines.push(format!(
            "{name}: FD refined {fd_refined:.4} < coarse {fd_coarse:.4}; \
             MSE refined {mse_refined:.5} <= coarse {mse_coarse:.5}"
        ));
    }
    report("c05 refinement-trend", ok, &lines.join(" | "));
}

// --------------------------------------------- 6. ablation ordering

#[test]
fn c06_full_configuration_orders_ahead_of_ablations() {
    let grid = ablation_grid();
    let mut lines = Vec::new();
    let mut every_seed_ok = true;
    for &seed in &GRID_SEEDS {
        let fd_of = |config: &str| {
            grid.iter().find(|r| r.seed == seed && r.config == config).unwrap().fd
        };
        let full = fd_of("full");
        let ablations = [
            ("w/o ControlVAE", fd_of("w/o ControlVAE")),
            ("w/o VQ", fd_of("w/o VQ")),
            ("w/o Diffusion Bridge", fd_of("w/o Diffusion Bridge")),
        ];
        let held = ablations.iter().filter(|(_, fd)| full <= *fd).count();
        every_seed_ok &= held >= 2;
        lines.push(format!(
            "seed {seed}: full {full:.4} vs {} ({held}/3 ordered)",
            ablations
                .iter()
                .map(|(n, fd)| format!("{n} {fd:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    report(
        "c06 ablation-ordering",
        every_seed_ok,
        &format!("full <= ablation FD for at least 2 of 3 ablations in every seed | {}", lines.join(" | ")),
    );
}

// -------------------------------------------- 7. style transfer fidelity

#[test]
fn c07_transfer_recovers_reference_factors() {
    let run = one_stage();
    let test = run.data.test();
    let mut rng = RngStream::new(4242);
    let start = Instant::now();
    let mut hits = 0;
    for _ in 0..TRANSFER_PAIRS {
        let src = rng.uniform_usize(test.len());
        let mut style = rng.uniform_usize(test.len());
        while style == src {
            style = rng.uniform_usize(test.len());
        }
        let reference = &test[style];
        let out = synthesize(
            &run.state,
            &test[src].content_seq,
            StyleSource::Reference(&reference.mel),
            &mut rng,
        )
        .unwrap();
        if let Ok(est) = estimate_factors(&out.refined) {
            let f = &reference.factors;
            let e_ok = (est.energy - f.energy).abs() / f.energy <= 0.15;
            let p_ok = (est.pitch_level - f.pitch_level).abs() <= 1.0;
            let v_ok = (est.pitch_var - f.pitch_var).abs() <= 1.0;
            if e_ok && p_ok && v_ok {
                hits += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = hits >= TRANSFER_MIN_HITS && secs < 600.0;
    report(
        "c07 transfer-fidelity",
        ok,
        &format!(
            "{hits}/{TRANSFER_PAIRS} pairs within (E 15%, P 1 band, V 1 band) — need \
             {TRANSFER_MIN_HITS}; inference {secs:.1}s < 600s"
        ),
    );
}

// --------------------------------- 8. bridge matches the posterior codes

#[test]
fn c08_bridge_samples_match_posterior_code_usage() {
    let run = one_stage();
    let state = &run.state;
    let k = state.cfg.codebook_size;

    let mut post_hist = vec![0.0f64; k];
    let mut rng = RngStream::new(777);
    for s in run.data.train() {
        let h = melstyle_core::pipeline::reference_encode(&state.params, &s.mel).unwrap();
        let post = encode_gaussian(&state.params.heads, &h).unwrap();
        for _ in 0..POSTERIOR_DRAWS_PER_CLIP {
            let eps = rng.normal_vec(state.cfg.latent_dim);
            let z = reparameterize(&post, &eps).unwrap();
            post_hist[nearest_code(&state.codebook, &z).unwrap().1] += 1.0;
        }
    }

    let mut bridge_hist = vec![0.0f64; k];
    let mut rng = RngStream::new(778);
    for _ in 0..BRIDGE_SAMPLES {
        let z = sample(
            &state.params.bridge,
            state.cfg.latent_dim,
            None,
            &state.sched_bridge,
            &mut rng,
        )
        .unwrap();
        bridge_hist[nearest_code(&state.codebook, &z).unwrap().1] += 1.0;
    }

    let post_n: f64 = post_hist.iter().sum();
    let bridge_n: f64 = bridge_hist.iter().sum();
    let tv = 0.5
        * post_hist
            .iter()
            .zip(&bridge_hist)
            .map(|(p, b)| (p / post_n - b / bridge_n).abs())
            .sum::<f64>();
    let used = post_hist.iter().filter(|&&c| c > 0.0).count();
    report(
        "c08 bridge-distribution",
        tv <= TV_BOUND,
        &format!(
            "total variation {tv:.4} <= {TV_BOUND} between {} bridge draws and \
             {} posterior draws over {used} active codes",
            BRIDGE_SAMPLES,
            post_n as usize
        ),
    );
}

// --------------------------------- 9. latent dims align with factors

/// Assignment of three distinct dimensions to (energy, pitch level, pitch
/// swing) maximizing first the number of factors meeting the correlation
/// and exclusivity bars, then the weakest correlation.
fn best_distinct_triple(rep: &ExclusivityReport) -> [(usize, f64, f64); 3] {
    let d = rep.dims.len();
    let qualifies = |dim: usize, f: usize| {
        let t = &rep.dims[dim];
        !t.degenerate && t.r[f].abs() >= R_MIN && t.exclusivity >= EXCL_MIN
    };
    let mut best: Option<([usize; 3], usize, f64)> = None;
    for de in 0..d {
        for dp in 0..d {
            if dp == de {
                continue;
            }
            for dv in 0..d {
                if dv == de || dv == dp {
                    continue;
                }
                let dims = [de, dp, dv];
                let count = (0..3).filter(|&f| qualifies(dims[f], f)).count();
                let min_r = (0..3)
                    .map(|f| rep.dims[dims[f]].r[f].abs())
                    .fold(f64::INFINITY, f64::min);
                let better = match &best {
                    None => true,
                    Some((_, c, m)) => count > *c || (count == *c && min_r > *m),
                };
                if better {
                    best = Some((dims, count, min_r));
                }
            }
        }
    }
    let (dims, _, _) = best.unwrap();
    [0, 1, 2].map(|f| {
        let t = &rep.dims[dims[f]];
        (dims[f], t.r[f], t.exclusivity)
    })
}

#[test]
fn c09_three_latent_dimensions_track_the_style_factors() {
    let grid = ablation_grid();
    let mut lines = Vec::new();
    let mut per_seed_counts = Vec::new();
    for run in grid.iter().filter(|r| r.config == "full") {
        let state = run.state.as_ref().unwrap();
        let data = make_dataset(state.cfg.dataset_n, state.cfg.seed).unwrap();
        let synth = TrainedSynth { state, seed: 9_000 + run.seed };
        let rep = exclusivity_score(&synth, data.train()).unwrap();
        let triple = best_distinct_triple(&rep);
        let count = triple
            .iter()
            .enumerate()
            .filter(|(f, (dim, _, excl))| {
                let t = &rep.dims[*dim];
                !t.degenerate && t.r[*f].abs() >= R_MIN && *excl >= EXCL_MIN
            })
            .count();
        per_seed_counts.push(count);
        lines.push(format!(
            "seed {}: {}",
            run.seed,
            triple
                .iter()
                .enumerate()
                .map(|(f, (dim, r, excl))| format!(
                    "{}→dim {dim} (r {r:+.2}, excl {excl:.2})",
                    FACTOR_NAMES[f]
                ))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    let every_seed = per_seed_counts.iter().all(|&c| c >= 2);
    let one_full = per_seed_counts.iter().any(|&c| c == 3);
    report(
        "c09 factor-disentanglement",
        every_seed && one_full,
        &format!(
            "factors meeting |r| >= {R_MIN}, exclusivity >= {EXCL_MIN} on distinct dims: \
             {per_seed_counts:?} (need >= 2 in every seed, 3 in at least one) | {}",
            lines.join(" | ")
        ),
    );
}

// ------------------------------------------------ 10. metric identities

#[test]
fn c10_metric_identities_hold() {
    let start = Instant::now();

    // 1-D Gaussians with exact moments, built from symmetric two-point sets:
    // {m - s, m + s} has mean m and unbiased variance 2 s^2.
    let gauss_1d = |mean: f64, var: f64| {
        let s = (var / 2.0).sqrt();
        fit_gaussian(&[vec![mean - s], vec![mean + s]]).unwrap()
    };
    let a = gauss_1d(0.0, 1.0);
    let same = gauss_1d(0.0, 1.0);
    let shifted = gauss_1d(1.0, 1.0);
    let wide = gauss_1d(0.0, 4.0);
    let fd_same = frechet_distance(&a, &same).unwrap();
    let fd_shift = frechet_distance(&a, &shifted).unwrap();
    let fd_wide = frechet_distance(&a, &wide).unwrap();
    let fd_ok = fd_same.abs() <= 1e-8 && (fd_shift - 1.0).abs() <= 1e-8 && (fd_wide - 1.0).abs() <= 1e-8;

    // MCD identities: zero on identical clips; invariant to a uniform
    // multiplicative rescaling of one input (the scale lands entirely in the
    // excluded 0th cepstral coefficient).
    let factors =
        melstyle_core::toydata::StyleFactors::new(1.1, 15.0, 2.5, 3).unwrap();
    let mel = melstyle_core::toydata::gen_toy_mel(&factors);
    let self_mcd = mcd(&mel, &mel);
    // Scale invariance needs entries that stay inside the value range after
    // rescaling and sit well above the log floor, so a pure c0 shift is the
    // only change: build such a clip directly.
    let bands = mel.mat().rows();
    let frames = mel.mat().cols();
    let base = Array::from_fn(vec![bands, frames], |i| 0.2 + 0.7 * ((i % 17) as f64 / 16.0));
    let scale = 0.6;
    let scaled_arr = Array::from_fn(vec![bands, frames], |i| (base.data()[i] + 1e-5) * scale - 1e-5);
    let plain = ToyMel::new(base).unwrap();
    let scaled = ToyMel::new(scaled_arr).unwrap();
    let one_side = mcd(&plain, &scaled);
    let mcd_ok = self_mcd == 0.0 && one_side <= 1e-9;

    let secs = start.elapsed().as_secs_f64();
    report(
        "c10 metric-identities",
        fd_ok && mcd_ok && secs < 1.0,
        &format!(
            "FD: self {fd_same:.1e}, mean-shift {fd_shift:.9}, variance-gap {fd_wide:.9}; \
             MCD: self {self_mcd:.1e}, one-side rescale {one_side:.1e}; {secs:.3}s < 1s"
        ),
    );
}

// --------------------------------------------------- 11. infrastructure

#[test]
fn c11_checkpoints_resume_and_logs_reproduce_bitwise() {
    let dir = tempfile::tempdir().unwrap();

    // Round trip: save -> load -> save is byte-identical.
    let mut cfg = doll_cfg(Mode::OneStage);
    cfg.steps = 6;
    let data = make_dataset(cfg.dataset_n, cfg.seed).unwrap();
    let mut state = TrainState::new(cfg.clone()).unwrap();
    for _ in 0..3 {
        let rec = train_step(&mut state, &data).unwrap();
        bridge_train_step(&mut state, &rec.z_batch).unwrap();
    }
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    save_state(&state, RunMode::Single(Mode::OneStage), &p1).unwrap();
    let (loaded, _) = load_state(&p1).unwrap();
    save_state(&loaded, RunMode::Single(Mode::OneStage), &p2).unwrap();
    let round_trip_ok = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();

    // Resume: 3 + 3 steps through a checkpoint equals 6 straight steps.
    let mut resumed = load_state(&p1).unwrap().0;
    let mut straight = TrainState::new(cfg).unwrap();
    for _ in 0..6 {
        let rec = train_step(&mut straight, &data).unwrap();
        bridge_train_step(&mut straight, &rec.z_batch).unwrap();
    }
    for _ in 0..3 {
        let rec = train_step(&mut resumed, &data).unwrap();
        bridge_train_step(&mut resumed, &rec.z_batch).unwrap();
    }
    let ps = dir.path().join("straight.ckpt");
    let pr = dir.path().join("resumed.ckpt");
    save_state(&straight, RunMode::Single(Mode::OneStage), &ps).unwrap();
    save_state(&resumed, RunMode::Single(Mode::OneStage), &pr).unwrap();
    let resume_ok = std::fs::read(&ps).unwrap() == std::fs::read(&pr).unwrap();

    // Fixed-seed reruns of the CLI training command reproduce the CSV log
    // byte for byte.
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        "latent_dim=4\ncodebook_size=8\nT_refiner=25\nT_bridge=25\nbatch=2\ndataset_n=12\nsteps=4\nseed=9\n",
    )
    .unwrap();
    let out_a = dir.path().join("ra");
    let out_b = dir.path().join("rb");
    commands::cmd_train(Some(&cfg_path), &out_a, None).unwrap();
    commands::cmd_train(Some(&cfg_path), &out_b, None).unwrap();
    let csv_ok = std::fs::read(out_a.join("train.csv")).unwrap()
        == std::fs::read(out_b.join("train.csv")).unwrap();

    report(
        "c11 infrastructure",
        round_trip_ok && resume_ok && csv_ok,
        &format!(
            "checkpoint round-trip bitwise {round_trip_ok}; resumed run bitwise-equal to \
             uninterrupted {resume_ok}; fixed-seed CSV logs identical {csv_ok}"
        ),
    );
}
