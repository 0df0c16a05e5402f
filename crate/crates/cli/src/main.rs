use clap::{Parser, Subcommand};
use melstyle_cli::commands;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "melstyle", about = "Train and run the toy mel style pipeline", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a pipeline from a config file, or resume one from a checkpoint
    Train {
        /// Run configuration file (key=value lines)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for train.csv and model.ckpt
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Checkpoint to resume; carries its own configuration
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Continue training only the latent prior model from a checkpoint
    BridgeTrain {
        /// Checkpoint to start from
        checkpoint: PathBuf,
        /// Output directory for bridge.csv and model.ckpt
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Steps to run (defaults to the checkpoint's step budget)
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Generate mels from the trained model and write PGM previews
    Sample {
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Number of mels to generate
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Noise seed (defaults to the training seed)
        #[arg(long)]
        seed: Option<u64>,
        /// Fixed content id for every frame (defaults to cycling ids)
        #[arg(long)]
        content: Option<usize>,
    },
    /// Re-render test clips with the style of other test clips
    Transfer {
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Number of content/style pairs
        #[arg(long, default_value_t = 16)]
        pairs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruction metrics on the test split (MCD per clip, set FD)
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write one latent-sweep PGM strip per latent dimension
    Traverse {
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the full model and three single-component ablations, score each
    Ablate {
        /// Run configuration file shared by all four runs
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train { config, out, resume } => {
            commands::cmd_train(config.as_deref(), &out, resume.as_deref())
        }
        Cmd::BridgeTrain { checkpoint, out, steps } => {
            commands::cmd_bridge_train(&checkpoint, &out, steps)
        }
        Cmd::Sample { checkpoint, out, count, seed, content } => {
            commands::cmd_sample(&checkpoint, &out, count, seed, content)
        }
        Cmd::Transfer { checkpoint, out, pairs, seed } => {
            commands::cmd_transfer(&checkpoint, &out, pairs, seed)
        }
        Cmd::Eval { checkpoint, out } => commands::cmd_eval(&checkpoint, &out),
        Cmd::Traverse { checkpoint, out, seed } => {
            commands::cmd_traverse(&checkpoint, &out, seed)
        }
        Cmd::Ablate { config, out } => commands::cmd_ablate(config.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
