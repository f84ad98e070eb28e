//! `boxcal` command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 parse or input error,
//! 3 no co-visible objects, 4 degenerate geometry.

mod calibrate;
mod eval;
mod monitor;
mod sweep;
mod synth;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use boxcal::io::{write_atomic, RunConfig};
use boxcal::{Error, TopK};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "boxcal",
    version,
    about = "Prior-free LiDAR extrinsic calibration from detection boxes"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Debug, Args)]
struct Overrides {
    /// JSON or TOML run configuration (`.toml` extension selects TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Per-pair validity threshold τ, meters.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Mean-distance filter τ₁, meters.
    #[arg(long, global = true)]
    tau1: Option<f64>,
    /// Weight on center distance.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Weight on corner-matrix distance.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Boxes kept per scene by volume: a count or `inf`.
    #[arg(long = "top-k", global = true, value_name = "K|inf")]
    top_k: Option<String>,
    /// Success threshold(s) λ in meters, comma separated.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    lambda: Vec<f64>,
    /// Seed for scene synthesis and noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trials per sweep cell.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output path; its meaning depends on the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the coop → ego extrinsic of one scene pair.
    Calibrate(calibrate::CalibrateArgs),
    /// Score calibrations listed in a manifest against ground truth.
    Eval(eval::EvalArgs),
    /// Noise-robustness sweep over the configured grid.
    Sweep,
    /// Replay the calibration monitor over a directory of frames.
    Monitor(monitor::MonitorArgs),
    /// Generate synthetic fixtures.
    Synth(synth::SynthArgs),
}

impl Overrides {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.tau {
            cfg.odist.tau = v;
        }
        if let Some(v) = self.tau1 {
            cfg.odist.tau1 = v;
        }
        if let Some(v) = self.alpha {
            cfg.odist.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.odist.beta = v;
        }
        if let Some(k) = &self.top_k {
            cfg.top_k = TopK::parse(k)?;
        }
        if let Some(seed) = self.seed {
            cfg.synth.seed = seed;
            cfg.noise.seed = seed;
        }
        if let Some(n) = self.trials {
            cfg.sweep.n_trials = n;
        }
        if let Some(&l) = self.lambda.first() {
            cfg.sweep.lambda = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.overrides.load()?;
    let o = &cli.overrides;
    match cli.command {
        Command::Calibrate(args) => calibrate::run(&args, &cfg, o.out.as_deref()),
        Command::Eval(args) => {
            let lambdas = if o.lambda.is_empty() {
                vec![cfg.sweep.lambda]
            } else {
                o.lambda.clone()
            };
            eval::run(&args, &cfg, &lambdas, o.out.as_deref())
        }
        Command::Sweep => sweep::run(&cfg, o.out.as_deref()),
        Command::Monitor(args) => monitor::run(&args, &cfg, o.out.as_deref()),
        Command::Synth(args) => synth::run(&args, &cfg, o.out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NoCoVisibleObjects | Error::EmptyMatchSet) => 3,
        Some(Error::DegenerateGeometry(..) | Error::DegenerateCorners { .. }) => 4,
        Some(
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::InvalidBox { .. }
            | Error::InvalidTransform(..)
            | Error::InvalidConfig(..),
        ) => 2,
        _ => 1,
    }
}

/// Writes `text` to `out` atomically, or to stdout when `out` is `None`.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text)?,
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
            _ => {}
        },
    }
    Ok(())
}

/// Shortest round-trip form, exponential for very small or large values.
fn num(x: f64) -> String {
    format!("{x:?}")
}

/// CSV cell for an optional number; empty when absent.
fn cell(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
