//! Command-line front end: `prepare`, `train`, `evaluate`, `report`,
//! `init-config` and `synth`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::*;
pub use config::{Backend, DataConfig, ModelConfig, RunConfig};

use crate::dataset::{TrainFraction, Usage};
use crate::model::AdapterRegistry;
use crate::synthetic::SyntheticSpec;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "fer", version, about = "Two-phase FER-2013 emotion classifier training")]
pub struct Cli {
    /// Run configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for the command's artefacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the CSV, build the stratified split and write its manifest.
    Prepare(PrepareCmd),
    /// Run the warm-up and fine-tuning phases.
    Train(TrainCmd),
    /// Score a checkpoint and write the report bundle.
    Evaluate(EvaluateCmd),
    /// Export accuracy and loss curves from a history CSV.
    Report(ReportCmd),
    /// Write the default configuration file.
    InitConfig(InitConfigCmd),
    /// Write a synthetic dataset in the FER-2013 CSV format.
    Synth(SynthCmd),
}

#[derive(Debug, Args)]
pub struct PrepareCmd {
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Training share, as a fraction (`7/8`) or decimal (`0.875`).
    #[arg(long)]
    pub train_fraction: Option<TrainFraction>,
    /// PublicTest or PrivateTest.
    #[arg(long)]
    pub test_partition: Option<Usage>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Use an existing split manifest instead of building one.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// test, validation, public-test or private-test.
    #[arg(long, default_value = "test")]
    pub partition: EvalPartition,
    /// Dataset path; defaults to the one recorded in the manifest.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    #[arg(long)]
    pub history: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitConfigCmd {
    /// Where to write the configuration.
    #[arg(long, default_value = "fer.toml")]
    pub path: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    /// Output CSV path.
    #[arg(long)]
    pub path: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 300)]
    pub training: usize,
    #[arg(long, default_value_t = 60)]
    pub public_test: usize,
    #[arg(long, default_value_t = 60)]
    pub private_test: usize,
    /// Reproduce the published FER-2013 class counts with filler pixels.
    #[arg(long)]
    pub official_counts: bool,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Execute `cli`; returns the lines to print on success.
pub fn run(cli: Cli, registry: &AdapterRegistry) -> Result<Vec<String>> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Prepare(cmd) => {
            let args = PrepareArgs {
                csv: cmd.csv.clone().unwrap_or_else(|| config.data.dataset.clone()),
                out: cli.out.clone().unwrap_or_else(|| PathBuf::from("out/prepare")),
                seed: config.seed,
                train_fraction: cmd.train_fraction.unwrap_or(config.data.train_fraction),
                test_partition: cmd.test_partition.unwrap_or(config.data.test_partition),
            };
            let s = cmd_prepare(&args)?;
            let m = &s.manifest.split;
            Ok(vec![
                format!("manifest: {}", s.manifest_path.display()),
                format!(
                    "train {} / validation {} / test {}",
                    m.train_indices.len(),
                    m.val_indices.len(),
                    m.test_indices.len()
                ),
                format!("digest: {}", m.digest),
            ])
        }
        Command::Train(cmd) => {
            let mut config = config;
            if let Some(csv) = &cmd.csv {
                config.data.dataset = csv.clone();
            }
            if let Some(m) = &cmd.manifest {
                config.data.manifest = m.clone();
            }
            if let Some(out) = &cli.out {
                config.output_dir = out.clone();
            }
            let s = cmd_train(&config, registry)?;
            let mut lines: Vec<String> = s.warnings.iter().map(|w| format!("warning: {w}")).collect();
            lines.push(format!(
                "epochs run: {}{}",
                s.history.len(),
                if s.stopped_early { " (stopped early)" } else { "" }
            ));
            lines.push(format!("best epoch {} val_acc {:.4}", s.best_epoch, s.best_val_acc));
            lines.push(format!("checkpoint sha256: {}", s.checkpoint_digest));
            lines.push(format!("outputs: {}", s.out_dir.display()));
            Ok(lines)
        }
        Command::Evaluate(cmd) => {
            let args = EvaluateArgs {
                checkpoint: cmd.checkpoint.clone(),
                manifest: cmd.manifest.clone(),
                partition: cmd.partition,
                out: cli.out.clone().unwrap_or_else(|| PathBuf::from("out/eval")),
                csv: cmd.csv.clone(),
            };
            let s = cmd_evaluate(&args, registry)?;
            Ok(vec![
                format!("rows: {}", s.rows),
                format!("accuracy: {:.4}", s.report.accuracy),
                format!("loss: {:.4}", s.loss),
                format!("macro_f1: {:.4}", s.report.macro_avg.f1),
                format!("outputs: {}", args.out.display()),
            ])
        }
        Command::Report(cmd) => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out/report"));
            let s = cmd_report(&cmd.history, &out)?;
            Ok(vec![
                format!("epochs: {}", s.epochs),
                format!("final val_acc: {:.4}", s.final_val_acc),
                format!("best val_acc: {:.4} (epoch {})", s.best_val_acc, s.best_epoch),
                format!("outputs: {}", out.display()),
            ])
        }
        Command::InitConfig(cmd) => {
            cmd_init_config(&cmd.path, cmd.csv.clone(), cli.out.clone())?;
            Ok(vec![format!("wrote {}", cmd.path.display())])
        }
        Command::Synth(cmd) => {
            if !(1..=crate::dataset::NUM_CLASSES).contains(&cmd.classes) {
                return Err(Error::Input("--classes must lie in 1..=7".into()));
            }
            let spec = SyntheticSpec {
                classes: cmd.classes,
                training: cmd.training,
                public_test: cmd.public_test,
                private_test: cmd.private_test,
                seed: config.seed,
            };
            let n = cmd_synth(&cmd.path, &spec, cmd.official_counts)?;
            Ok(vec![format!("wrote {n} rows to {}", cmd.path.display())])
        }
    }
}
