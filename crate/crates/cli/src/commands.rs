//! Command implementations. Each function is deterministic given its
//! configuration, seed, and input files.

use crate::checkpoint::{load_state, mel_entries, save_state, write_container};
use crate::config::{load_config, two_stage_split, CliConfig, RunMode};
use crate::csvlog::{fmt_f64, CsvLog, TRAIN_COLUMNS};
use crate::error::{io_ctx, CliError, Result};
use crate::pgm::export_pgm;
use melstyle_core::evalmetrics::{fit_gaussian, frechet_distance, mcd, mel_features};
use melstyle_core::numerics::{Array, RngStream};
use melstyle_core::pipeline::{
    bridge_train_step, draw_plan, fill_pins, reference_encode, synthesize, train_step,
    traverse_latent, Mode, StyleSource, TrainState,
};
use melstyle_core::toydata::{estimate_factors, make_dataset, ToyDataset, ToyMel, BANDS, CONTENT_VOCAB, FRAMES};
use melstyle_core::vae::encode_gaussian;
use std::path::Path;

fn ensure_dir(dir: &Path) -> Result<()> {
    io_ctx(std::fs::create_dir_all(dir), &dir.display().to_string())
}

fn dataset_for(state: &TrainState) -> Result<ToyDataset> {
    Ok(make_dataset(state.cfg.dataset_n, state.cfg.seed)?)
}

/// Advances one run to its step budget, alternating a bridge update after
/// every pipeline step when the bridge is enabled, and logging one CSV row
/// per pipeline step. Two-stage runs switch to the frozen-backbone stage
/// at the 60/40 split of the budget.
fn run_training(state: &mut TrainState, run: RunMode, data: &ToyDataset, log: &mut CsvLog) -> Result<()> {
    let total = state.cfg.steps;
    let (s1, _) = two_stage_split(total);
    while state.step < total {
        if run == RunMode::TwoStage {
            state.cfg.mode = if state.step < s1 { Mode::TwoStageS1 } else { Mode::TwoStageS2 };
        }
        let record = train_step(state, data)?;
        if state.cfg.use_bridge {
            bridge_train_step(state, &record.z_batch)?;
        }
        log.loss_row(&record)?;
    }
    Ok(())
}

pub fn cmd_train(config: Option<&Path>, out: &Path, resume: Option<&Path>) -> Result<()> {
    if config.is_some() && resume.is_some() {
        return Err(CliError::Usage {
            context: "pass either --config or --resume, not both; a checkpoint carries its own configuration"
                .to_string(),
        });
    }
    ensure_dir(out)?;
    let (mut state, run) = match resume {
        Some(p) => load_state(p)?,
        None => {
            let cfg = match config {
                Some(p) => load_config(p)?,
                None => CliConfig::default(),
            };
            (TrainState::new(cfg.pipe.clone())?, cfg.run)
        }
    };
    let data = dataset_for(&state)?;
    let mut log = CsvLog::create(&out.join("train.csv"), &TRAIN_COLUMNS)?;
    run_training(&mut state, run, &data, &mut log)?;
    log.finish()?;
    save_state(&state, run, &out.join("model.ckpt"))
}

/// Continues bridge training against a frozen pipeline: every step encodes
/// a fresh batch, detaches the latents, and updates only the bridge. Rows
/// carry the observed KL and the bridge loss; the backbone loss columns
/// are zero since no backbone pass runs.
pub fn cmd_bridge_train(ckpt: &Path, out: &Path, steps: Option<u64>) -> Result<()> {
    ensure_dir(out)?;
    let (mut state, run) = load_state(ckpt)?;
    if !state.cfg.use_bridge {
        return Err(CliError::State {
            context: "the bridge is disabled by this checkpoint's configuration".to_string(),
        });
    }
    let data = dataset_for(&state)?;
    let n = steps.unwrap_or(state.cfg.steps);
    let mut log = CsvLog::create(&out.join("bridge.csv"), &TRAIN_COLUMNS)?;
    for i in 1..=n {
        let train = data.train();
        let mut plan = draw_plan(&state.cfg, &mut state.rng, train.len())?;
        let kl = fill_pins(&state.params, &state.codebook, &state.cfg, train, &mut plan)?;
        let z_batch: Vec<Vec<f64>> = plan.elems.into_iter().map(|e| e.z0).collect();
        let lb = bridge_train_step(&mut state, &z_batch)?;
        log.row(&[
            i.to_string(),
            fmt_f64(0.0),
            fmt_f64(kl),
            fmt_f64(state.controller.beta),
            fmt_f64(0.0),
            fmt_f64(0.0),
            fmt_f64(lb),
            fmt_f64(lb),
        ])?;
    }
    log.finish()?;
    save_state(&state, run, &out.join("model.ckpt"))
}

pub fn cmd_sample(
    ckpt: &Path,
    out: &Path,
    count: usize,
    seed: Option<u64>,
    content: Option<usize>,
) -> Result<()> {
    ensure_dir(out)?;
    let (state, _) = load_state(ckpt)?;
    let data = dataset_for(&state)?;
    let test = data.test();
    let mut rng = RngStream::new(seed.unwrap_or(state.cfg.seed));
    let mut stored: Vec<(String, ToyMel)> = Vec::with_capacity(count);
    for i in 0..count {
        let ids = vec![content.unwrap_or(i % CONTENT_VOCAB); FRAMES];
        let style = if state.cfg.use_bridge {
            StyleSource::Bridge
        } else {
            StyleSource::Reference(&test[i % test.len()].mel)
        };
        let output = synthesize(&state, &ids, style, &mut rng)?;
        export_pgm(output.refined.mat(), &out.join(format!("sample_{i}.pgm")))?;
        stored.push((format!("mel{i}"), output.refined));
    }
    let refs: Vec<(String, &ToyMel)> = stored.iter().map(|(n, m)| (n.clone(), m)).collect();
    write_container(&out.join("samples.mels"), &mel_entries(&refs))
}

/// Non-parallel style transfer over test-set pairs: content comes from one
/// clip, style from another. The CSV pairs the reference factors with the
/// factors measured on the output.
pub fn cmd_transfer(ckpt: &Path, out: &Path, pairs: usize, seed: Option<u64>) -> Result<()> {
    ensure_dir(out)?;
    let (state, _) = load_state(ckpt)?;
    let data = dataset_for(&state)?;
    let test = data.test();
    let mut rng = RngStream::new(seed.unwrap_or(state.cfg.seed));
    let mut log = CsvLog::create(
        &out.join("transfer.csv"),
        &["pair", "ref_e", "ref_p", "ref_v", "est_e", "est_p", "est_v"],
    )?;
    let mut stored: Vec<(String, ToyMel)> = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let content_src = &test[(2 * i) % test.len()];
        let style_ref = &test[(2 * i + 1) % test.len()];
        let output = synthesize(
            &state,
            &content_src.content_seq,
            StyleSource::Reference(&style_ref.mel),
            &mut rng,
        )?;
        let est = estimate_factors(&output.refined);
        let (ee, ep, ev) = match est {
            Ok(f) => (f.energy, f.pitch_level, f.pitch_var),
            Err(_) => (f64::NAN, f64::NAN, f64::NAN),
        };
        log.row(&[
            i.to_string(),
            fmt_f64(style_ref.factors.energy),
            fmt_f64(style_ref.factors.pitch_level),
            fmt_f64(style_ref.factors.pitch_var),
            fmt_f64(ee),
            fmt_f64(ep),
            fmt_f64(ev),
        ])?;
        export_pgm(output.refined.mat(), &out.join(format!("transfer_{i}.pgm")))?;
        stored.push((format!("mel{i}"), output.refined));
    }
    log.finish()?;
    let refs: Vec<(String, &ToyMel)> = stored.iter().map(|(n, m)| (n.clone(), m)).collect();
    write_container(&out.join("transfers.mels"), &mel_entries(&refs))
}

/// Parallel reconstruction metrics on the test split: per-clip MCD plus
/// the Fréchet distance between the feature Gaussians of the
/// reconstructions and the targets (constant across rows).
pub fn cmd_eval(ckpt: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (state, _) = load_state(ckpt)?;
    let data = dataset_for(&state)?;
    let test = data.test();
    let mut rng = RngStream::new(state.cfg.seed);
    let mut recon = Vec::with_capacity(test.len());
    for s in test {
        let output = synthesize(&state, &s.content_seq, StyleSource::Reference(&s.mel), &mut rng)?;
        recon.push(output.refined);
    }
    let gen_feats: Vec<Vec<f64>> =
        recon.iter().map(mel_features).collect::<melstyle_core::Result<_>>()?;
    let tgt_feats: Vec<Vec<f64>> =
        test.iter().map(|s| mel_features(&s.mel)).collect::<melstyle_core::Result<_>>()?;
    let fd = frechet_distance(&fit_gaussian(&gen_feats)?, &fit_gaussian(&tgt_feats)?)?;
    let mut log = CsvLog::create(&out.join("eval.csv"), &["row", "mcd", "fd"])?;
    for (i, (g, s)) in recon.iter().zip(test).enumerate() {
        log.row(&[i.to_string(), fmt_f64(mcd(g, &s.mel)), fmt_f64(fd)])?;
    }
    log.finish()
}

/// One PGM strip per latent dimension: nine decodes sweeping that
/// coordinate ±2σ around the dataset-mean latent, tiled along the frame
/// axis, all with one fixed content id and noise seed.
pub fn cmd_traverse(ckpt: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    ensure_dir(out)?;
    let (state, _) = load_state(ckpt)?;
    let data = dataset_for(&state)?;
    let seed = seed.unwrap_or(state.cfg.seed);
    let train = data.train();
    let d = state.cfg.latent_dim;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for s in train {
        let h = reference_encode(&state.params, &s.mel)?;
        let post = encode_gaussian(&state.params.heads, &h)?;
        for i in 0..d {
            mean[i] += post.mu[i];
            sq[i] += post.mu[i] * post.mu[i];
        }
    }
    let n = train.len() as f64;
    let mut sigma = vec![0.0; d];
    for i in 0..d {
        mean[i] /= n;
        sigma[i] = (sq[i] / n - mean[i] * mean[i]).max(0.0).sqrt();
    }
    const POINTS: usize = 9;
    let content = vec![0usize; FRAMES];
    for dim in 0..d {
        let values: Vec<f64> = (0..POINTS)
            .map(|k| {
                let t = k as f64 / (POINTS - 1) as f64 * 2.0 - 1.0;
                mean[dim] + 2.0 * sigma[dim] * t
            })
            .collect();
        let mels = traverse_latent(&state, &mean, dim, &values, &content, seed)?;
        let strip = Array::from_fn(vec![BANDS, POINTS * FRAMES], |i| {
            let r = i / (POINTS * FRAMES);
            let c = i % (POINTS * FRAMES);
            mels[c / FRAMES].at(r, c % FRAMES)
        });
        export_pgm(&strip, &out.join(format!("traverse_dim{dim}.pgm")))?;
    }
    Ok(())
}

/// Fréchet distance between generated and target test features, where
/// generation uses the configuration's own inference path: bridge-sampled
/// style when the bridge is enabled, reference style otherwise.
pub fn generation_fd(state: &TrainState, data: &ToyDataset, seed: u64) -> Result<f64> {
    let test = data.test();
    let mut rng = RngStream::new(seed);
    let mut gen_feats = Vec::with_capacity(test.len());
    let mut tgt_feats = Vec::with_capacity(test.len());
    for s in test {
        let style = if state.cfg.use_bridge {
            StyleSource::Bridge
        } else {
            StyleSource::Reference(&s.mel)
        };
        let output = synthesize(state, &s.content_seq, style, &mut rng)?;
        gen_feats.push(mel_features(&output.refined)?);
        tgt_feats.push(mel_features(&s.mel)?);
    }
    Ok(frechet_distance(&fit_gaussian(&gen_feats)?, &fit_gaussian(&tgt_feats)?)?)
}

/// Ablation battery: trains the full configuration and the three
/// single-flag ablations on the same seed and dataset, then scores each by
/// generation Fréchet distance. Emits exactly four rows.
pub fn cmd_ablate(config: Option<&Path>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let base = match config {
        Some(p) => load_config(p)?,
        None => CliConfig::default(),
    };
    let variants: [(&str, fn(&mut melstyle_core::pipeline::PipelineConfig)); 4] = [
        ("full", |_| {}),
        ("w/o ControlVAE", |c| c.use_controlvae = false),
        ("w/o VQ", |c| c.use_vq = false),
        ("w/o Diffusion Bridge", |c| c.use_bridge = false),
    ];
    let mut log = CsvLog::create(&out.join("ablation.csv"), &["config", "fd"])?;
    for (name, tweak) in variants {
        let mut pipe = base.pipe.clone();
        tweak(&mut pipe);
        let mut state = TrainState::new(pipe)?;
        let data = dataset_for(&state)?;
        let mut run_log = CsvLog::create(
            &out.join(format!("train_{}.csv", slug(name))),
            &TRAIN_COLUMNS,
        )?;
        run_training(&mut state, base.run, &data, &mut run_log)?;
        run_log.finish()?;
        let fd = generation_fd(&state, &data, state.cfg.seed)?;
        log.row(&[name.to_string(), fmt_f64(fd)])?;
    }
    log.finish()
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}
