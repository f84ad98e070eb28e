use std::path::{Path, PathBuf};

use anyhow::Result;
use boxcal::calibrate;
use boxcal::io::{read_scene, write_extrinsic_atomic, RunConfig};
use clap::Args;

use crate::emit;

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Ego scene file.
    pub ego: PathBuf,
    /// Cooperative scene file.
    pub coop: PathBuf,
}

/// Prints the calibration report as JSON; `out` receives the extrinsic file.
pub fn run(args: &CalibrateArgs, cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let ego = read_scene(&args.ego)?;
    let coop = read_scene(&args.coop)?;
    let report = calibrate(&ego, &coop, &cfg.calibration())?;
    if let Some(path) = out {
        write_extrinsic_atomic(path, &report.transform)?;
    }
    emit(
        None,
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
    )
}
