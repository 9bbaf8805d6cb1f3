//! `rarefsl`: synthetic data, contrastive pretraining, few-shot baselines,
//! self-distillation, evaluation and reporting from one configuration.

mod artifacts;
mod commands;
mod plot;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rarefsl::distill::{LabelDesign, LossVariant};

use crate::artifacts::UsageError;

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "RAREFSL_WORKERS";

#[derive(Parser)]
#[command(name = "rarefsl", version, about = "Few-shot rare-disease classification experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct GlobalArgs {
    /// TOML file layered over the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in defaults: `desk` (small, CPU) or `paper` (full scale).
    #[arg(long, global = true)]
    pub profile: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace existing artifacts instead of refusing.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// Override one setting, e.g. `--set pretrain.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct TaskArgs {
    /// Seed of the evaluation task (default: the first configured task).
    #[arg(long, conflicts_with = "task")]
    pub task_seed: Option<u64>,
    /// Index of the configured evaluation task.
    #[arg(long)]
    pub task: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset as class folders plus meta.json.
    SynthData,
    /// Contrastive pretraining of the encoder on the base split.
    Pretrain {
        /// Continue from the saved training state.
        #[arg(long)]
        resume: bool,
    },
    /// Fit logistic regression on one task's support features.
    FitBaseline {
        /// Encoder checkpoint (default: <out>/pretrain/encoder.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Train a student from a teacher artifact and score it.
    Distill {
        /// Teacher artifact (default: the baseline for the chosen task).
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        label_design: Option<LabelDesign>,
        #[arg(long)]
        loss_variant: Option<LossVariant>,
        #[arg(long)]
        alpha_final: Option<f64>,
    },
    /// Baseline and distillation over every configured task.
    Evaluate {
        /// Encoder checkpoint (default: <out>/pretrain/encoder.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Merge reports from run directories into a table and plots.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn configure_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| UsageError(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_workers()?;
    let g = &cli.global;
    match cli.command {
        Command::SynthData => commands::synth_data(g),
        Command::Pretrain { resume } => commands::pretrain(g, resume),
        Command::FitBaseline { checkpoint, task } => commands::fit_baseline(g, checkpoint, &task),
        Command::Distill {
            teacher,
            task,
            label_design,
            loss_variant,
            alpha_final,
        } => commands::distill(g, teacher, &task, label_design, loss_variant, alpha_final),
        Command::Evaluate { checkpoint } => commands::evaluate(g, checkpoint),
        Command::Report { runs } => commands::report(g, &runs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
