//! `mdiff`: synthetic data, training, sampling and evaluation for the
//! motion-diffusion library.

mod cmd;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Bad flags, unknown config keys, unparsable values and missing inputs.
/// Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "mdiff", version, about = "Diffusion-based 3D motion prediction")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Parent directory for run directories (config key `out_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic dataset.
    Synth,
    /// Train a denoiser on a dataset.
    Train(TrainArgs),
    /// Draw predictions from a trained checkpoint.
    Sample(SampleArgs),
    /// Score samples against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable op and both denoisers.
    Gradcheck(GradcheckArgs),
    /// Long-format CSV of samples and/or metrics for plotting.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest, or a synth run directory containing one.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `stochastic` or `deterministic`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Samples per task in stochastic mode.
    #[arg(long)]
    pub n: Option<usize>,
    /// `train`, `test` or `all`.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Sample run directory or its `samples.json`.
    #[arg(long)]
    pub samples: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Corrupt the pullback of one op (negative control).
    #[arg(long, hide = true, value_name = "OP")]
    pub inject_fault: Option<String>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Sample run directory or its `samples.json`.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// A `metrics.csv` written by `eval`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

fn resolve(cli: &Cli) -> Result<RunConfig, UsageError> {
    let mut cfg = RunConfig::defaults();
    if let Some(path) = &cli.config {
        cfg.merge_file(path)?;
    }
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    if let Some(out) = &cli.out {
        cfg.set("out_dir", out.display().to_string())?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string())?;
    }
    match &cli.command {
        Command::Train(a) => {
            if let Some(v) = &a.variant {
                cfg.set("variant", v.as_str())?;
            }
            if let Some(i) = a.iterations {
                cfg.set("iterations", i.to_string())?;
            }
        }
        Command::Sample(a) => {
            if let Some(m) = &a.mode {
                cfg.set("mode", m.as_str())?;
            }
            if let Some(n) = a.n {
                cfg.set("n_samples", n.to_string())?;
            }
            if let Some(s) = &a.split {
                cfg.set("split", s.as_str())?;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Synth => cmd::synth::run(&cfg),
        Command::Train(a) => cmd::train::run(&cfg, a),
        Command::Sample(a) => cmd::sample::run(&cfg, a),
        Command::Eval(a) => cmd::eval::run(&cfg, a),
        Command::Gradcheck(a) => cmd::gradcheck::run(&cfg, a),
        Command::Export(a) => cmd::export::run(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
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
