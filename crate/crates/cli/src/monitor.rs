use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use boxcal::io::{read_extrinsic, read_scene, write_atomic, write_extrinsic_atomic, RunConfig};
use boxcal::monitor::unreadable_frame;
use boxcal::{step, Error, MonitorState, Scene};
use clap::Args;

use crate::emit;

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Directory of `<stem>_ego.json` / `<stem>_coop.json` pairs, replayed
    /// in lexicographic stem order.
    pub dir: PathBuf,
    /// Final state file [default: DIR/monitor_state.json].
    #[arg(long, value_name = "FILE")]
    pub state: Option<PathBuf>,
    /// Persisted extrinsic [default: DIR/extrinsic.json].
    #[arg(long, value_name = "FILE")]
    pub extrinsic: Option<PathBuf>,
    /// Start from the state file if present, else from the extrinsic file
    /// if present, instead of a fresh state.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Default)]
struct FramePaths {
    ego: Option<PathBuf>,
    coop: Option<PathBuf>,
}

fn frame_paths(dir: &Path) -> Result<Vec<(String, FramePaths)>> {
    let io_err = |e: std::io::Error| Error::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut frames: BTreeMap<String, FramePaths> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix("_ego.json") {
            frames.entry(stem.to_owned()).or_default().ego = Some(path.clone());
        } else if let Some(stem) = name.strip_suffix("_coop.json") {
            frames.entry(stem.to_owned()).or_default().coop = Some(path.clone());
        }
    }
    Ok(frames.into_iter().collect())
}

fn load_frame(
    stem: &str,
    paths: &FramePaths,
    frame_id: u64,
) -> std::result::Result<(Scene, Scene), String> {
    let read = |p: &Option<PathBuf>, side: &str| match p {
        Some(p) => read_scene(p).map_err(|e| e.to_string()),
        None => Err(format!("{stem}_{side}.json missing")),
    };
    let mut ego = read(&paths.ego, "ego")?;
    let mut coop = read(&paths.coop, "coop")?;
    ego.frame_id = frame_id;
    coop.frame_id = frame_id;
    Ok((ego, coop))
}

fn initial_state(
    args: &MonitorArgs,
    state_path: &Path,
    extrinsic_path: &Path,
) -> Result<MonitorState> {
    if !args.resume {
        return Ok(MonitorState::new());
    }
    if state_path.exists() {
        let text = std::fs::read_to_string(state_path).map_err(|e| Error::Io {
            path: state_path.display().to_string(),
            message: e.to_string(),
        })?;
        return serde_json::from_str(&text).map_err(|e| {
            Error::Parse {
                context: state_path.display().to_string(),
                message: e.to_string(),
            }
            .into()
        });
    }
    if extrinsic_path.exists() {
        return Ok(MonitorState::restored(read_extrinsic(extrinsic_path)?));
    }
    Ok(MonitorState::new())
}

/// Frame ids in events are positions in the replay order. The extrinsic
/// file is rewritten atomically whenever the current extrinsic changes.
pub fn run(args: &MonitorArgs, cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let state_path = args
        .state
        .clone()
        .unwrap_or_else(|| args.dir.join("monitor_state.json"));
    let extrinsic_path = args
        .extrinsic
        .clone()
        .unwrap_or_else(|| args.dir.join("extrinsic.json"));
    let calib = cfg.calibration();
    let mut state = initial_state(args, &state_path, &extrinsic_path)?;
    let mut log = String::new();
    for (idx, (stem, paths)) in frame_paths(&args.dir)?.iter().enumerate() {
        let frame_id = idx as u64;
        let (next, events) = match load_frame(stem, paths, frame_id) {
            Ok((ego, coop)) => step(&state, &ego, &coop, &cfg.monitor, &calib),
            Err(reason) => unreadable_frame(&state, frame_id, &reason),
        };
        if next.current_extrinsic != state.current_extrinsic {
            if let Some(t) = &next.current_extrinsic {
                write_extrinsic_atomic(&extrinsic_path, t)?;
            }
        }
        for event in &events {
            log.push_str(&serde_json::to_string(event)?);
            log.push('\n');
        }
        state = next;
    }
    write_atomic(&state_path, &serde_json::to_string_pretty(&state)?)?;
    emit(out, &log)
}
