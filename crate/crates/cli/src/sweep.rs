use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use boxcal::io::RunConfig;
use boxcal::noise_sweep;
use boxcal::synth::noise_grid;

use crate::{cell, emit, num};

pub const HEADER: &str = "sigma_pos_m,yaw_std_deg,success_rate,mrte_m,mrre_deg,n_trials";

/// One CSV row per grid cell, σ-major. No timing is written, so output is
/// a pure function of the configuration.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let grid = noise_grid(&cfg.sweep.sigma_pos, &cfg.sweep.yaw_std_deg, cfg.noise.seed);
    let rows = noise_sweep(
        &grid,
        &cfg.synth,
        cfg.sweep.n_trials,
        cfg.sweep.lambda,
        &cfg.calibration(),
    )?;
    let mut csv = format!("{HEADER}\n");
    for r in rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            num(r.sigma_pos),
            num(r.yaw_std_deg),
            num(r.summary.success_rate),
            cell(r.summary.mrte),
            cell(r.summary.mrre),
            r.summary.n_total
        )?;
    }
    emit(out, &csv)
}
