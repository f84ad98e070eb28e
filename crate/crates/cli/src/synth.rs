use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use boxcal::io::{write_atomic, write_extrinsic_atomic, write_scene, RunConfig};
use boxcal::synth::{mix_seed, scripted_stream, StreamKind};
use boxcal::{generate_scene_pair, inject_noise, NoiseConfig, SynthConfig};
use clap::{Args, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Stream {
    Clean,
    Drift,
    Lost,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Write N scene pairs plus `manifest.csv` for `eval`.
    #[arg(long, value_name = "N", conflicts_with = "stream")]
    pub pairs: Option<usize>,
    /// Write a scripted monitor stream instead of scene pairs.
    #[arg(long, value_enum)]
    pub stream: Option<Stream>,
    /// Frames in the stream.
    #[arg(long, default_value_t = 10)]
    pub frames: u64,
    /// First affected frame of a drift or lost stream
    /// [default: 5 for drift, 7 for lost].
    #[arg(long)]
    pub at: Option<u64>,
}

/// Writes fixtures into the directory `out`. Scene pairs get the configured
/// noise, independently per side; streams are noise-free.
pub fn run(args: &SynthArgs, cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let Some(dir) = out else {
        bail!("synth needs --out DIR");
    };
    std::fs::create_dir_all(dir)?;
    match (args.stream, args.pairs) {
        (Some(kind), _) => write_stream(dir, kind, args, &cfg.synth),
        (None, Some(n)) => {
            let mut manifest = String::from("ego,coop,gt\n");
            for i in 0..n {
                let stem = format!("pair_{i:03}");
                let synth = SynthConfig {
                    seed: mix_seed(&[cfg.synth.seed, i as u64]),
                    ..cfg.synth.clone()
                };
                let noise = NoiseConfig {
                    seed: mix_seed(&[cfg.noise.seed, i as u64]),
                    ..cfg.noise
                };
                write_pair(dir, &stem, &synth, &noise)?;
                writeln!(
                    manifest,
                    "{stem}_ego.json,{stem}_coop.json,{stem}_truth.json"
                )?;
            }
            write_atomic(&dir.join("manifest.csv"), &manifest)?;
            Ok(())
        }
        (None, None) => write_pair(dir, "scene", &cfg.synth, &cfg.noise),
    }
}

fn write_pair(dir: &Path, stem: &str, synth: &SynthConfig, noise: &NoiseConfig) -> Result<()> {
    let pair = generate_scene_pair(synth)?;
    let side = |stream: u64| NoiseConfig {
        seed: mix_seed(&[noise.seed, stream]),
        ..*noise
    };
    write_scene(
        &dir.join(format!("{stem}_ego.json")),
        &inject_noise(&pair.ego, &side(1))?,
    )?;
    write_scene(
        &dir.join(format!("{stem}_coop.json")),
        &inject_noise(&pair.coop, &side(2))?,
    )?;
    write_extrinsic_atomic(&dir.join(format!("{stem}_truth.json")), &pair.truth)?;
    Ok(())
}

fn write_stream(dir: &Path, kind: Stream, args: &SynthArgs, synth: &SynthConfig) -> Result<()> {
    let kind = match kind {
        Stream::Clean => StreamKind::Clean,
        Stream::Drift => StreamKind::Drift {
            at: args.at.unwrap_or(5),
        },
        Stream::Lost => StreamKind::LostCoVisibility {
            at: args.at.unwrap_or(7),
        },
    };
    for (f, (ego, coop, truth)) in scripted_stream(kind, args.frames, synth)?
        .iter()
        .enumerate()
    {
        let stem = format!("frame_{f:03}");
        write_scene(&dir.join(format!("{stem}_ego.json")), ego)?;
        write_scene(&dir.join(format!("{stem}_coop.json")), coop)?;
        write_extrinsic_atomic(&dir.join(format!("{stem}_truth.json")), truth)?;
    }
    Ok(())
}
