//! Command-line front end: dataset generation, training, evaluation with
//! optional noise sweeps, and the numerical self-check suites. Exit codes are
//! script-friendly: 0 success, 2 bad configuration, 3 bad data or checkpoint,
//! 4 failed self-check, 1 anything else.

use crate::config::{ExperimentConfig, NoiseConfig, Variant};
use crate::error::{Error, Result};
use crate::oracle::{run_suite, SUITES};
use crate::train::{generate_dataset, run_eval, run_training};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_ORACLE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "soundloc3d",
    version,
    about = "Simulate multiview RGB-D + microphone-array scenes, train the set-prediction localizer, and score it"
)]
struct Cli {
    /// Run on a single thread so repeated runs are byte-identical
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render scenes into a dataset split on disk
    GenData {
        /// "paper", "desk", or a path to a config JSON file
        #[arg(long)]
        config: String,
        /// Dataset directory (created if absent)
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes to render
        #[arg(long)]
        scenes: usize,
        /// Split name recorded in the manifest
        #[arg(long, default_value = "train")]
        split: String,
        /// Regenerate an existing split, or restart a directory rendered
        /// under a different config
        #[arg(long)]
        force: bool,
    },
    /// Optimize the localizer on a dataset's train split
    Train {
        /// "paper", "desk", or a path to a config JSON file
        #[arg(long)]
        config: String,
        /// Dataset directory produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the checkpoint and training log
        #[arg(long)]
        out: PathBuf,
        /// Override the configured step budget
        #[arg(long)]
        steps: Option<usize>,
        /// Ablation: full, noRGB, noDepth, noCVC, or noRGBD
        #[arg(long, default_value = "full")]
        variant: String,
        /// Continue from the rolling checkpoint in --out
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on a dataset's test split
    Eval {
        /// Checkpoint written by train
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Output directory for metrics and predictions
        #[arg(long)]
        out: PathBuf,
        /// Mix white noise into the recordings at this SNR; several values
        /// run a sweep, each writing under <out>/snr<value>/
        #[arg(long, num_args = 1.., value_name = "DB")]
        snr_db: Vec<f64>,
        /// Perturb each camera's orientation before scoring: every Euler
        /// angle gets independent N(0, delta) radians of noise
        #[arg(long, value_name = "DELTA")]
        pose_delta: Option<f64>,
    },
    /// Run the numerical self-check suites
    Oracle {
        /// One of geometry, dsp, grad, hungarian, zero-loss; all when absent
        #[arg(long)]
        suite: Option<String>,
    },
}

/// Worker budget: `--deterministic` pins one thread; otherwise SL3D_THREADS
/// caps the machine's available parallelism.
fn thread_budget(cap: Option<&str>, deterministic: bool, available: usize) -> Result<usize> {
    if deterministic {
        return Ok(1);
    }
    let available = available.max(1);
    let Some(raw) = cap else {
        return Ok(available);
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("SL3D_THREADS must be a positive integer, not {raw:?}")))?;
    if n == 0 {
        return Err(Error::Config("SL3D_THREADS must be at least 1".into()));
    }
    Ok(n.min(available))
}

fn resolve_threads(deterministic: bool) -> Result<usize> {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let var = std::env::var("SL3D_THREADS").ok();
    thread_budget(var.as_deref(), deterministic, available)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Invalid(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Checkpoint(_) => EXIT_DATA,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let threads = resolve_threads(cli.deterministic)?;
    match cli.command {
        Command::GenData {
            config,
            out,
            scenes,
            split,
            force,
        } => {
            let cfg = ExperimentConfig::resolve(&config)?;
            let manifest = generate_dataset(&cfg, &out, &split, scenes, force, threads)?;
            println!(
                "wrote {scenes} scenes to split {split:?} of {} (config {}, seed {})",
                out.display(),
                manifest.config_hash,
                manifest.master_seed
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            config,
            data,
            out,
            steps,
            variant,
            resume,
        } => {
            let variant = Variant::parse(&variant)?;
            let mut cfg = ExperimentConfig::resolve(&config)?;
            if let Some(steps) = steps {
                cfg.train.steps = steps;
            }
            variant.apply(&mut cfg);
            let summary = run_training(&cfg, variant, &data, &out, resume, threads)?;
            println!(
                "trained {} steps ({}): loss {:.6} -> {:.6}",
                summary.steps_run,
                variant.label(),
                summary.first_total,
                summary.last_total
            );
            println!("checkpoint: {}", summary.checkpoint.display());
            println!("log:        {}", summary.log.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            ckpt,
            data,
            out,
            snr_db,
            pose_delta,
        } => {
            if !ckpt.exists() {
                return Err(Error::Data(format!("checkpoint {} does not exist", ckpt.display())));
            }
            let runs: Vec<(Option<f64>, PathBuf)> = if snr_db.is_empty() {
                vec![(None, out.clone())]
            } else if snr_db.len() == 1 {
                vec![(Some(snr_db[0]), out.clone())]
            } else {
                snr_db.iter().map(|&v| (Some(v), out.join(format!("snr{v}")))).collect()
            };
            for (snr, run_out) in runs {
                let noise = NoiseConfig {
                    snr_db: snr,
                    pose_delta,
                };
                let summary = run_eval(&ckpt, &data, &run_out, &noise, threads)?;
                let male = summary
                    .metrics
                    .male
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into());
                let label = match snr {
                    Some(v) => format!("snr {v} dB"),
                    None => "clean".into(),
                };
                println!(
                    "{label}: mAP {:.4}  mAR {:.4}  mALE {male}  ({})",
                    summary.metrics.map,
                    summary.metrics.mar,
                    summary.metrics_path.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { suite } => {
            let picks: Vec<&str> = match &suite {
                Some(name) => vec![name.as_str()],
                None => SUITES.to_vec(),
            };
            let mut all_passed = true;
            for name in picks {
                let outcome = run_suite(name)?;
                all_passed &= outcome.passed;
                println!(
                    "{}: {} — {}",
                    outcome.suite,
                    if outcome.passed { "pass" } else { "FAIL" },
                    outcome.detail
                );
            }
            if all_passed {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_ORACLE))
            }
        }
    }
}

/// Entry point for the `soundloc3d` binary.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
