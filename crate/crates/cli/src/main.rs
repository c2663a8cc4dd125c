//! `mostnet`: dataset synthesis, training, evaluation, ablations, inference
//! and parameter accounting.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mostnet_core::mostnet::Ablation;
use mostnet_core::synthdata::Split;

use config::{Profile, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Validation(String),
    /// Failure while running: exit code 3.
    Runtime(String),
}

impl From<mostnet_core::Error> for CliError {
    fn from(e: mostnet_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mostnet", version, about = "Joint video restoration, segmentation and homography estimation")]
struct Cli {
    /// TOML file with [scene], [degradation], [clips], [model], [train] and [eval] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint to read (eval, infer) or to write and optionally resume from (train).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    device: String,
    /// Root against which relative paths are resolved.
    #[arg(long, global = true, env = "MOSTNET_WORKSPACE")]
    workspace: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth,
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Length of the learning-rate schedule.
        #[arg(long)]
        steps: Option<u64>,
        /// Initial learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from the checkpoint instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint (or the ground truth) on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<Split>,
        /// Score the ground truth as if it were a prediction.
        #[arg(long)]
        ground_truth: bool,
        /// Write degraded | restored | ground-truth strips per frame.
        #[arg(long)]
        frames: bool,
    },
    /// Train and score every architecture variant under the same budget.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Training steps per variant.
        #[arg(long, default_value_t = 50)]
        steps: u64,
    },
    /// Run a checkpoint on a directory of PNG frames.
    Infer {
        #[arg(long)]
        input: PathBuf,
    },
    /// Print learnable parameter counts.
    Params {
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        json: bool,
    },
}

pub struct Context {
    pub cfg: RunConfig,
    /// Top-level sections present in the config file.
    pub file_sections: Vec<String>,
    pub workspace: PathBuf,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Context {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workspace.join(p)
        }
    }

    pub fn out_dir(&self, default: &str) -> PathBuf {
        self.resolve(self.out.as_deref().unwrap_or(Path::new(default)))
    }

    pub fn checkpoint(&self) -> Result<PathBuf, CliError> {
        self.checkpoint
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::Validation("--checkpoint is required".into()))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.device != "cpu" {
        return Err(CliError::Validation(format!("device {:?} is not available; use cpu", cli.device)));
    }
    let workspace = match cli.workspace {
        Some(w) => w,
        None => std::env::current_dir().map_err(|e| CliError::Runtime(e.to_string()))?,
    };
    let config_path = cli.config.as_deref().map(|p| if p.is_absolute() { p.to_path_buf() } else { workspace.join(p) });
    let (mut cfg, file_sections) = RunConfig::load(cli.profile, config_path.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let mut ctx = Context {
        cfg,
        file_sections,
        workspace,
        out: cli.out,
        checkpoint: cli.checkpoint,
    };
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Train { data, steps, lr, resume } => {
            if let Some(s) = steps {
                ctx.cfg.train.steps = s;
            }
            if let Some(lr) = lr {
                ctx.cfg.train.lr_start = lr;
                ctx.cfg.train.lr_end = ctx.cfg.train.lr_end.min(lr);
            }
            commands::train(&ctx, &data, resume)
        }
        Command::Eval {
            data,
            split,
            ground_truth,
            frames,
        } => {
            if let Some(s) = split {
                ctx.cfg.eval.split = s;
            }
            ctx.cfg.eval.side_by_side |= frames;
            commands::eval(&ctx, &data, ground_truth)
        }
        Command::Ablate { data, steps } => commands::ablate(&ctx, &data, steps),
        Command::Infer { input } => commands::infer(&ctx, &input),
        Command::Params { ablation, json } => commands::params(&ctx, ablation, json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
