//! Checkpoint container and training-state persistence.
//!
//! The container is a named-tensor file: an ASCII header with one line per
//! tensor — `name dim-count dims… offset` — terminated by a blank line,
//! followed by the tensor bodies as little-endian 32-bit floats in header
//! order, followed by a 64-bit checksum (the wrapping sum of every
//! preceding byte, little-endian). Offsets count body elements.
//!
//! Everything the training loop mutates is f32-valued by construction
//! (parameters, moments, codebook), so 32-bit storage is lossless and
//! `load(save(x))` is bitwise. 64-bit scalars — controller accumulators,
//! RNG words, counters, config floats — are stored exactly by splitting
//! their bit patterns into four 16-bit words, each of which is an integer
//! a 32-bit float represents exactly.

use crate::config::RunMode;
use crate::error::{io_ctx, CliError, Result};
use melstyle_core::numerics::Array;
use melstyle_core::pipeline::{Mode, PipelineConfig, TrainState};
use melstyle_core::numerics::RngStream;
use melstyle_core::toydata::ToyMel;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// One stored tensor: name, shape, values.
pub type Entry = (String, Vec<usize>, Vec<f64>);

fn wrapping_byte_sum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64))
}

/// Serializes entries into the container byte format.
pub fn encode_container(entries: &[Entry]) -> Vec<u8> {
    let mut header = String::new();
    let mut offset = 0usize;
    for (name, shape, data) in entries {
        header.push_str(name);
        header.push(' ');
        header.push_str(&shape.len().to_string());
        for d in shape {
            header.push(' ');
            header.push_str(&d.to_string());
        }
        header.push(' ');
        header.push_str(&offset.to_string());
        header.push('\n');
        offset += data.len();
    }
    header.push('\n');
    let mut bytes = header.into_bytes();
    for (_, _, data) in entries {
        for &v in data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let sum = wrapping_byte_sum(&bytes);
    bytes.extend_from_slice(&sum.to_le_bytes());
    bytes
}

/// Parses and verifies a container: checksum first, then header/body
/// agreement (shapes, offsets, total length).
pub fn decode_container(bytes: &[u8]) -> Result<Vec<Entry>> {
    if bytes.len() < 8 {
        return Err(CliError::Integrity { context: "file shorter than its checksum".to_string() });
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = wrapping_byte_sum(payload);
    if stored != computed {
        return Err(CliError::Integrity {
            context: format!("checksum mismatch: stored {stored}, computed {computed}"),
        });
    }
    // Header ends at the first blank line.
    let mut header_end = None;
    let mut pos = 0;
    while pos < payload.len() {
        let line_end = payload[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| pos + p)
            .ok_or_else(|| CliError::Integrity {
                context: "header is not terminated by a blank line".to_string(),
            })?;
        if line_end == pos {
            header_end = Some(pos + 1);
            break;
        }
        pos = line_end + 1;
    }
    let body_start = header_end.ok_or_else(|| CliError::Integrity {
        context: "header is not terminated by a blank line".to_string(),
    })?;
    let header = std::str::from_utf8(&payload[..body_start - 1]).map_err(|_| {
        CliError::Integrity { context: "header is not valid ASCII".to_string() }
    })?;
    let body = &payload[body_start..];
    if body.len() % 4 != 0 {
        return Err(CliError::Integrity {
            context: format!("body length {} is not a multiple of 4", body.len()),
        });
    }
    let total_elems = body.len() / 4;

    let mut entries = Vec::new();
    let mut expected_offset = 0usize;
    for line in header.lines() {
        let mut fields = line.split(' ');
        let name = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CliError::Integrity {
                context: format!("malformed header line '{line}'"),
            })?
            .to_string();
        let mut nums: Vec<usize> = Vec::new();
        for f in fields {
            nums.push(f.parse().map_err(|_| CliError::Integrity {
                context: format!("malformed header line '{line}'"),
            })?);
        }
        if nums.len() < 2 || nums.len() != nums[0] + 2 {
            return Err(CliError::Integrity {
                context: format!("malformed header line '{line}'"),
            });
        }
        let shape = nums[1..nums.len() - 1].to_vec();
        let offset = nums[nums.len() - 1];
        if offset != expected_offset {
            return Err(CliError::Integrity {
                context: format!("tensor '{name}': offset {offset}, expected {expected_offset}"),
            });
        }
        let len: usize = shape.iter().product();
        if offset + len > total_elems {
            return Err(CliError::Integrity {
                context: format!("tensor '{name}' overruns the body"),
            });
        }
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            let at = (offset + i) * 4;
            let raw: [u8; 4] = body[at..at + 4].try_into().unwrap();
            data.push(f32::from_le_bytes(raw) as f64);
        }
        entries.push((name, shape, data));
        expected_offset += len;
    }
    if expected_offset != total_elems {
        return Err(CliError::Integrity {
            context: format!(
                "body holds {total_elems} elements but the header accounts for {expected_offset}"
            ),
        });
    }
    Ok(entries)
}

pub fn write_container(path: &Path, entries: &[Entry]) -> Result<()> {
    let bytes = encode_container(entries);
    let ctx = path.display().to_string();
    let mut f = io_ctx(std::fs::File::create(path), &ctx)?;
    io_ctx(f.write_all(&bytes), &ctx)
}

pub fn read_container(path: &Path) -> Result<Vec<Entry>> {
    let bytes = io_ctx(std::fs::read(path), &path.display().to_string())?;
    decode_container(&bytes)
}

/// Splits a 64-bit pattern into four 16-bit words, low word first.
pub fn u64_words(v: u64) -> Vec<f64> {
    (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f64).collect()
}

pub fn words_u64(words: &[f64]) -> Result<u64> {
    if words.len() != 4 {
        return Err(CliError::Integrity {
            context: format!("scalar entry holds {} words, expected 4", words.len()),
        });
    }
    let mut v = 0u64;
    for (i, &w) in words.iter().enumerate() {
        if !(w.fract() == 0.0 && (0.0..=65535.0).contains(&w)) {
            return Err(CliError::Integrity {
                context: format!("scalar word {w} is not a 16-bit integer"),
            });
        }
        v |= (w as u64) << (16 * i);
    }
    Ok(v)
}

pub fn f64_words(v: f64) -> Vec<f64> {
    u64_words(v.to_bits())
}

pub fn words_f64(words: &[f64]) -> Result<f64> {
    Ok(f64::from_bits(words_u64(words)?))
}

fn mode_code(m: Mode) -> u64 {
    match m {
        Mode::Vaefs => 0,
        Mode::OneStage => 1,
        Mode::TwoStageS1 => 2,
        Mode::TwoStageS2 => 3,
    }
}

fn code_mode(c: u64) -> Result<Mode> {
    match c {
        0 => Ok(Mode::Vaefs),
        1 => Ok(Mode::OneStage),
        2 => Ok(Mode::TwoStageS1),
        3 => Ok(Mode::TwoStageS2),
        other => Err(CliError::Integrity { context: format!("unknown mode code {other}") }),
    }
}

fn scalar(name: &str, words: Vec<f64>) -> Entry {
    (name.to_string(), vec![words.len()], words)
}

fn tensor(name: &str, a: &Array) -> Entry {
    (name.to_string(), a.shape().to_vec(), a.data().to_vec())
}

/// Flattens the full training state — configuration, parameters, codebook,
/// optimizer moments, controller, counters and RNG — into container
/// entries. Loading rebuilds a state that continues training bitwise.
pub fn state_entries(state: &TrainState, run: RunMode) -> Vec<Entry> {
    let cfg = &state.cfg;
    let mut e: Vec<Entry> = vec![
        scalar("cfg.mode", u64_words(mode_code(cfg.mode))),
        scalar(
            "cfg.run_two_stage",
            u64_words(if run == RunMode::TwoStage { 1 } else { 0 }),
        ),
        scalar("cfg.latent_dim", u64_words(cfg.latent_dim as u64)),
        scalar("cfg.codebook_size", u64_words(cfg.codebook_size as u64)),
        scalar("cfg.gamma", f64_words(cfg.gamma)),
        scalar("cfg.kp", f64_words(cfg.kp)),
        scalar("cfg.ki", f64_words(cfg.ki)),
        scalar("cfg.beta_min", f64_words(cfg.beta_min)),
        scalar("cfg.beta_max", f64_words(cfg.beta_max)),
        scalar("cfg.kl_target", f64_words(cfg.kl_target)),
        scalar("cfg.t_refiner", u64_words(cfg.t_refiner as u64)),
        scalar("cfg.t_bridge", u64_words(cfg.t_bridge as u64)),
        scalar("cfg.steps", u64_words(cfg.steps)),
        scalar("cfg.batch", u64_words(cfg.batch as u64)),
        scalar("cfg.lr", f64_words(cfg.lr)),
        scalar("cfg.seed", u64_words(cfg.seed)),
        scalar("cfg.dataset_n", u64_words(cfg.dataset_n as u64)),
        scalar("cfg.ramp", u64_words(cfg.ramp)),
        scalar("cfg.use_controlvae", u64_words(cfg.use_controlvae as u64)),
        scalar("cfg.use_vq", u64_words(cfg.use_vq as u64)),
        scalar("cfg.vq_warmup", u64_words(cfg.vq_warmup)),
        scalar("cfg.use_bridge", u64_words(cfg.use_bridge as u64)),
        scalar("cfg.enc_dim", u64_words(cfg.enc_dim as u64)),
        scalar("cfg.embed_dim", u64_words(cfg.embed_dim as u64)),
        scalar("cfg.cond_proj_dim", u64_words(cfg.cond_proj_dim as u64)),
        scalar("cfg.dec_hidden", u64_words(cfg.dec_hidden as u64)),
        scalar("cfg.ref_hidden", u64_words(cfg.ref_hidden as u64)),
        scalar("cfg.bridge_hidden", u64_words(cfg.bridge_hidden as u64)),
    ];
    for (name, a) in state.params.named() {
        e.push(tensor(&name, a));
    }
    e.push(tensor("codebook.entries", &state.codebook.entries));
    e.push((
        "codebook.ema_counts".to_string(),
        vec![state.codebook.ema_counts.len()],
        state.codebook.ema_counts.clone(),
    ));
    e.push(tensor("codebook.ema_sums", &state.codebook.ema_sums));
    e.push(scalar("codebook.decay", f64_words(state.codebook.decay)));
    e.push(scalar("codebook.smoothing", f64_words(state.codebook.smoothing)));
    e.push(scalar("codebook.ema_mode", u64_words(state.codebook.ema_mode as u64)));
    for (prefix, opt) in [
        ("opt_backbone", &state.opt_backbone),
        ("opt_refine", &state.opt_refine),
        ("opt_bridge", &state.opt_bridge),
    ] {
        e.push(scalar(&format!("{prefix}.step"), u64_words(opt.step_count())));
        let (m, v) = opt.moments();
        for (name, a) in opt.names().iter().zip(m) {
            e.push(tensor(&format!("{prefix}.m.{name}"), a));
        }
        for (name, a) in opt.names().iter().zip(v) {
            e.push(tensor(&format!("{prefix}.v.{name}"), a));
        }
    }
    e.push(scalar("ctl.sum_e", f64_words(state.controller.sum_e)));
    e.push(scalar("ctl.beta", f64_words(state.controller.beta)));
    e.push(scalar(
        "kl_ema.flag",
        u64_words(if state.kl_ema.is_some() { 1 } else { 0 }),
    ));
    e.push(scalar("kl_ema.bits", f64_words(state.kl_ema.unwrap_or(0.0))));
    e.push(scalar("step", u64_words(state.step)));
    let words = state.rng.to_words();
    let mut rng_words = Vec::with_capacity(12);
    for w in words {
        rng_words.extend(u64_words(w));
    }
    e.push(("rng".to_string(), vec![12], rng_words));
    e
}

pub fn save_state(state: &TrainState, run: RunMode, path: &Path) -> Result<()> {
    write_container(path, &state_entries(state, run))
}

struct EntryMap(BTreeMap<String, (Vec<usize>, Vec<f64>)>);

impl EntryMap {
    fn take(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        self.0.remove(name).ok_or_else(|| CliError::Integrity {
            context: format!("missing tensor '{name}'"),
        })
    }

    fn scalar_u64(&mut self, name: &str) -> Result<u64> {
        let (_, words) = self.take(name)?;
        words_u64(&words)
    }

    fn scalar_f64(&mut self, name: &str) -> Result<f64> {
        let (_, words) = self.take(name)?;
        words_f64(&words)
    }

    fn fill(&mut self, name: &str, target: &mut Array) -> Result<()> {
        let (shape, data) = self.take(name)?;
        if shape != target.shape() {
            return Err(CliError::Integrity {
                context: format!(
                    "tensor '{name}': stored shape {shape:?}, expected {:?}",
                    target.shape()
                ),
            });
        }
        target.data_mut().copy_from_slice(&data);
        Ok(())
    }

    fn array(&mut self, name: &str, want: &[usize]) -> Result<Array> {
        let (shape, data) = self.take(name)?;
        if shape != want {
            return Err(CliError::Integrity {
                context: format!("tensor '{name}': stored shape {shape:?}, expected {want:?}"),
            });
        }
        Array::new(shape, data).map_err(CliError::Core)
    }
}

pub fn load_state(path: &Path) -> Result<(TrainState, RunMode)> {
    let entries = read_container(path)?;
    let mut map = EntryMap(entries.into_iter().map(|(n, s, d)| (n, (s, d))).collect());

    let mode = code_mode(map.scalar_u64("cfg.mode")?)?;
    let run = if map.scalar_u64("cfg.run_two_stage")? == 1 {
        RunMode::TwoStage
    } else {
        RunMode::Single(mode)
    };
    let cfg = PipelineConfig {
        mode,
        latent_dim: map.scalar_u64("cfg.latent_dim")? as usize,
        codebook_size: map.scalar_u64("cfg.codebook_size")? as usize,
        gamma: map.scalar_f64("cfg.gamma")?,
        kp: map.scalar_f64("cfg.kp")?,
        ki: map.scalar_f64("cfg.ki")?,
        beta_min: map.scalar_f64("cfg.beta_min")?,
        beta_max: map.scalar_f64("cfg.beta_max")?,
        kl_target: map.scalar_f64("cfg.kl_target")?,
        t_refiner: map.scalar_u64("cfg.t_refiner")? as usize,
        t_bridge: map.scalar_u64("cfg.t_bridge")? as usize,
        steps: map.scalar_u64("cfg.steps")?,
        batch: map.scalar_u64("cfg.batch")? as usize,
        lr: map.scalar_f64("cfg.lr")?,
        seed: map.scalar_u64("cfg.seed")?,
        dataset_n: map.scalar_u64("cfg.dataset_n")? as usize,
        ramp: map.scalar_u64("cfg.ramp")?,
        use_controlvae: map.scalar_u64("cfg.use_controlvae")? == 1,
        use_vq: map.scalar_u64("cfg.use_vq")? == 1,
        vq_warmup: map.scalar_u64("cfg.vq_warmup")?,
        use_bridge: map.scalar_u64("cfg.use_bridge")? == 1,
        enc_dim: map.scalar_u64("cfg.enc_dim")? as usize,
        embed_dim: map.scalar_u64("cfg.embed_dim")? as usize,
        cond_proj_dim: map.scalar_u64("cfg.cond_proj_dim")? as usize,
        dec_hidden: map.scalar_u64("cfg.dec_hidden")? as usize,
        ref_hidden: map.scalar_u64("cfg.ref_hidden")? as usize,
        bridge_hidden: map.scalar_u64("cfg.bridge_hidden")? as usize,
    };
    let mut state = TrainState::new(cfg)?;

    for (name, a) in state.params.named_mut() {
        map.fill(&name, a)?;
    }
    map.fill("codebook.entries", &mut state.codebook.entries)?;
    let (shape, counts) = map.take("codebook.ema_counts")?;
    if shape != [state.codebook.ema_counts.len()] {
        return Err(CliError::Integrity {
            context: format!("tensor 'codebook.ema_counts': stored shape {shape:?}"),
        });
    }
    state.codebook.ema_counts = counts;
    map.fill("codebook.ema_sums", &mut state.codebook.ema_sums)?;
    state.codebook.decay = map.scalar_f64("codebook.decay")?;
    state.codebook.smoothing = map.scalar_f64("codebook.smoothing")?;
    state.codebook.ema_mode = map.scalar_u64("codebook.ema_mode")? == 1;

    for (prefix, opt) in [
        ("opt_backbone", &mut state.opt_backbone),
        ("opt_refine", &mut state.opt_refine),
        ("opt_bridge", &mut state.opt_bridge),
    ] {
        let step = map.scalar_u64(&format!("{prefix}.step"))?;
        let names: Vec<String> = opt.names().to_vec();
        let (m0, _) = opt.moments();
        let shapes: Vec<Vec<usize>> = m0.iter().map(|a| a.shape().to_vec()).collect();
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (name, shape) in names.iter().zip(&shapes) {
            m.push(map.array(&format!("{prefix}.m.{name}"), shape)?);
        }
        for (name, shape) in names.iter().zip(&shapes) {
            v.push(map.array(&format!("{prefix}.v.{name}"), shape)?);
        }
        opt.restore(step, m, v)?;
    }

    state.controller.sum_e = map.scalar_f64("ctl.sum_e")?;
    state.controller.beta = map.scalar_f64("ctl.beta")?;
    state.kl_ema = if map.scalar_u64("kl_ema.flag")? == 1 {
        Some(map.scalar_f64("kl_ema.bits")?)
    } else {
        None
    };
    state.step = map.scalar_u64("step")?;
    let (shape, words) = map.take("rng")?;
    if shape != [12] {
        return Err(CliError::Integrity {
            context: format!("tensor 'rng': stored shape {shape:?}, expected [12]"),
        });
    }
    let mut rw = [0u64; 3];
    for (i, chunk) in words.chunks(4).enumerate() {
        rw[i] = words_u64(chunk)?;
    }
    state.rng = RngStream::from_words(rw);
    Ok((state, run))
}

/// Stores clips in the container format, one tensor per clip, for exact
/// later inspection (the PGM export quantizes to 8 bits; this does not).
pub fn mel_entries(mels: &[(String, &ToyMel)]) -> Vec<Entry> {
    mels.iter().map(|(name, mel)| tensor(name, mel.mat())).collect()
}
