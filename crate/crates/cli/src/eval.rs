use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use boxcal::io::{read_extrinsic, read_scene, RunConfig};
use boxcal::{calibrate, summarize, Error, TrialError};
use clap::Args;

use crate::{cell, emit, num};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV manifest with one `ego,coop,gt` line per trial. Relative paths
    /// resolve against the manifest's directory.
    pub manifest: PathBuf,
    /// Directory against which ground-truth paths resolve instead.
    #[arg(long, value_name = "DIR")]
    pub gt_dir: Option<PathBuf>,
}

pub const HEADER: &str = "lambda,mRRE,mRTE,SuccessRate,mean_time_s,n_total,n_valid,n_missing_gt";

struct Entry {
    ego: PathBuf,
    coop: PathBuf,
    gt: PathBuf,
}

fn parse_manifest(path: &Path, gt_dir: Option<&Path>) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "ego,coop,gt" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [ego, coop, gt] = fields[..] else {
            return Err(Error::Parse {
                context: format!("{}:{}", path.display(), n + 1),
                message: format!("expected 3 fields `ego,coop,gt`, found {}", fields.len()),
            }
            .into());
        };
        entries.push(Entry {
            ego: base.join(ego),
            coop: base.join(coop),
            gt: gt_dir.unwrap_or(base).join(gt),
        });
    }
    Ok(entries)
}

/// Writes one CSV row per λ. Trials whose ground truth cannot be read are
/// excluded from every metric and counted in `n_missing_gt`.
pub fn run(args: &EvalArgs, cfg: &RunConfig, lambdas: &[f64], out: Option<&Path>) -> Result<()> {
    let entries = parse_manifest(&args.manifest, args.gt_dir.as_deref())?;
    let calib = cfg.calibration();
    let mut trials = Vec::with_capacity(entries.len());
    let mut times = Vec::with_capacity(entries.len());
    let mut missing_gt = 0usize;
    for e in &entries {
        let Ok(truth) = read_extrinsic(&e.gt) else {
            missing_gt += 1;
            continue;
        };
        let ego = read_scene(&e.ego).with_context(|| format!("ego scene of {}", e.gt.display()))?;
        let coop =
            read_scene(&e.coop).with_context(|| format!("coop scene of {}", e.gt.display()))?;
        match calibrate(&ego, &coop, &calib) {
            Ok(report) => {
                times.push(report.elapsed.as_secs_f64());
                trials.push(TrialError::from_transforms(&truth, &report.transform));
            }
            Err(_) => trials.push(TrialError::solver_failure()),
        }
    }
    let mean_time = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);

    let mut csv = format!("{HEADER}\n");
    for &lambda in lambdas {
        match summarize(&trials, lambda) {
            Ok(s) => writeln!(
                csv,
                "{},{},{},{},{},{},{},{missing_gt}",
                num(lambda),
                cell(s.mrre),
                cell(s.mrte),
                num(s.success_rate),
                cell(mean_time),
                s.n_total,
                s.n_valid
            )?,
            Err(Error::EmptyTrialSet) => writeln!(csv, "{},,,,,0,0,{missing_gt}", num(lambda))?,
            Err(e) => return Err(e.into()),
        }
    }
    emit(out, &csv)
}
