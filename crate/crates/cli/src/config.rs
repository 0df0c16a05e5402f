//! Flat key=value run configuration.
//!
//! The key set is closed; unknown keys are rejected with the line they
//! appear on, as are malformed or out-of-range values. Every key has a
//! default equal to the desk-scale values, so an empty file is a valid
//! configuration. `paper` as the preset line switches the defaults to the
//! published hyperparameters before the remaining keys are applied.

use crate::error::{io_ctx, CliError, Result};
use melstyle_core::pipeline::{Mode, PipelineConfig};
use std::path::Path;

/// What one `train` invocation runs: a single mode end to end, or the
/// stage-1 → stage-2 protocol under one step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Single(Mode),
    TwoStage,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Single(m) => m.name(),
            RunMode::TwoStage => "two_stage",
        }
    }

    /// Pipeline mode a fresh run starts in.
    pub fn initial_mode(self) -> Mode {
        match self {
            RunMode::Single(m) => m,
            RunMode::TwoStage => Mode::TwoStageS1,
        }
    }
}

/// Step budget split of a two-stage run: stage 1 takes 60% of the total,
/// rounded up, so the backbone is settled before it freezes.
pub fn two_stage_split(steps: u64) -> (u64, u64) {
    let s1 = (steps * 3).div_ceil(5);
    (s1, steps - s1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub run: RunMode,
    pub pipe: PipelineConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            run: RunMode::Single(Mode::OneStage),
            pipe: PipelineConfig::desk_default(Mode::OneStage),
        }
    }
}

fn parse_run_mode(value: &str, line: usize) -> Result<RunMode> {
    if value == "two_stage" {
        return Ok(RunMode::TwoStage);
    }
    Mode::parse(value).map(RunMode::Single).map_err(|_| CliError::Config {
        line,
        message: format!(
            "mode: unknown value '{value}' (expected vaefs, one_stage, two_stage, two_stage_s1 or two_stage_s2)"
        ),
    })
}

fn parse_usize(key: &str, value: &str, line: usize) -> Result<usize> {
    value.parse().map_err(|_| CliError::Config {
        line,
        message: format!("{key}: '{value}' is not a valid non-negative integer"),
    })
}

fn parse_u64(key: &str, value: &str, line: usize) -> Result<u64> {
    value.parse().map_err(|_| CliError::Config {
        line,
        message: format!("{key}: '{value}' is not a valid non-negative integer"),
    })
}

fn parse_f64(key: &str, value: &str, line: usize) -> Result<f64> {
    let v: f64 = value.parse().map_err(|_| CliError::Config {
        line,
        message: format!("{key}: '{value}' is not a valid number"),
    })?;
    if !v.is_finite() {
        return Err(CliError::Config {
            line,
            message: format!("{key}: '{value}' is not finite"),
        });
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config {
            line,
            message: format!("{key}: '{value}' is not a valid bool (true|false)"),
        }),
    }
}

/// Parses a configuration from text. Blank lines and lines starting with
/// `#` are skipped; everything else must be `key=value`.
pub fn parse_config(text: &str) -> Result<CliConfig> {
    let mut cfg = CliConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if trimmed == "paper" {
            let run = cfg.run;
            cfg.pipe = PipelineConfig::paper_preset(run.initial_mode());
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| CliError::Config {
            line,
            message: format!("expected key=value, got '{trimmed}'"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "mode" => {
                cfg.run = parse_run_mode(value, line)?;
                cfg.pipe.mode = cfg.run.initial_mode();
            }
            "latent_dim" => cfg.pipe.latent_dim = parse_usize(key, value, line)?,
            "codebook_size" => cfg.pipe.codebook_size = parse_usize(key, value, line)?,
            "gamma" => cfg.pipe.gamma = parse_f64(key, value, line)?,
            "kp" => cfg.pipe.kp = parse_f64(key, value, line)?,
            "ki" => cfg.pipe.ki = parse_f64(key, value, line)?,
            "beta_min" => cfg.pipe.beta_min = parse_f64(key, value, line)?,
            "beta_max" => cfg.pipe.beta_max = parse_f64(key, value, line)?,
            "kl_target" => cfg.pipe.kl_target = parse_f64(key, value, line)?,
            "T_refiner" => cfg.pipe.t_refiner = parse_usize(key, value, line)?,
            "T_bridge" => cfg.pipe.t_bridge = parse_usize(key, value, line)?,
            "steps" => cfg.pipe.steps = parse_u64(key, value, line)?,
            "batch" => cfg.pipe.batch = parse_usize(key, value, line)?,
            "lr" => cfg.pipe.lr = parse_f64(key, value, line)?,
            "seed" => cfg.pipe.seed = parse_u64(key, value, line)?,
            "dataset_n" => cfg.pipe.dataset_n = parse_usize(key, value, line)?,
            "ramp" => cfg.pipe.ramp = parse_u64(key, value, line)?,
            "use_controlvae" => cfg.pipe.use_controlvae = parse_bool(key, value, line)?,
            "use_vq" => cfg.pipe.use_vq = parse_bool(key, value, line)?,
            "vq_warmup" => cfg.pipe.vq_warmup = parse_u64(key, value, line)?,
            "use_bridge" => cfg.pipe.use_bridge = parse_bool(key, value, line)?,
            _ => {
                return Err(CliError::Config {
                    line,
                    message: format!("unknown key '{key}'"),
                })
            }
        }
    }
    cfg.pipe.validate().map_err(|e| CliError::Config {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<CliConfig> {
    let text = io_ctx(std::fs::read_to_string(path), &path.display().to_string())?;
    parse_config(&text)
}
