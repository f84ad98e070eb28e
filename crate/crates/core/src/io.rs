//! JSON scene and extrinsic files, and the run configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::association::{ODistParams, TopK};
use crate::error::{Error, Result};
use crate::geometry::{DetectionBox, Mat3, RigidTransform, Scene, Vec3};
use crate::monitor::MonitorConfig;
use crate::pipeline::{CalibrationConfig, DEFAULT_TOP_K};
use crate::synth::{NoiseConfig, SynthConfig};

/// Rotation tolerance accepted when loading extrinsic files.
pub const EXTRINSIC_LOAD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default)]
    pub agent_id: String,
    #[serde(default)]
    pub frame_id: u64,
    pub boxes: Vec<BoxRecord>,
}

/// One box as written on disk. Exactly one of `yaw` (radians) and
/// `yaw_deg` must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f64>,
    #[serde(default = "one")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

fn one() -> f64 {
    1.0
}

impl BoxRecord {
    fn to_box(&self, index: usize) -> Result<DetectionBox> {
        let ctx = |field: &str| format!("boxes[{index}].{field}");
        let yaw = match (self.yaw, self.yaw_deg) {
            (Some(y), None) => y,
            (None, Some(d)) => d.to_radians(),
            (Some(_), Some(_)) => {
                return Err(Error::Parse {
                    context: ctx("yaw"),
                    message: "give either yaw or yaw_deg, not both".into(),
                })
            }
            (None, None) => {
                return Err(Error::Parse {
                    context: ctx("yaw"),
                    message: "missing yaw (radians) or yaw_deg".into(),
                })
            }
        };
        let b = DetectionBox::new(
            Vec3::from(self.center),
            Vec3::from(self.dims),
            yaw,
            self.confidence,
        )
        .map_err(|e| match e {
            Error::InvalidBox { field, reason } => Error::Parse {
                context: ctx(field),
                message: reason,
            },
            other => other,
        })?;
        Ok(match &self.class {
            Some(c) => b.with_class(c.clone()),
            None => b,
        })
    }

    fn from_box(b: &DetectionBox) -> Self {
        Self {
            center: (*b.center()).into(),
            dims: (*b.dims()).into(),
            yaw: Some(b.yaw()),
            yaw_deg: None,
            confidence: b.confidence(),
            class: b.class_label().map(str::to_owned),
        }
    }
}

impl SceneFile {
    pub fn into_scene(self) -> Result<Scene> {
        let boxes = self
            .boxes
            .iter()
            .enumerate()
            .map(|(i, r)| r.to_box(i))
            .collect::<Result<_>>()?;
        Ok(Scene::new(self.agent_id, self.frame_id, boxes))
    }

    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            agent_id: scene.agent_id.clone(),
            frame_id: scene.frame_id,
            boxes: scene.boxes.iter().map(BoxRecord::from_box).collect(),
        }
    }
}

fn json_error(context: &str, e: serde_json::Error) -> Error {
    Error::Parse {
        context: context.to_owned(),
        message: e.to_string(),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn scene_from_json(text: &str) -> Result<Scene> {
    serde_json::from_str::<SceneFile>(text)
        .map_err(|e| json_error("scene", e))?
        .into_scene()
}

pub fn scene_to_json(scene: &Scene) -> String {
    serde_json::to_string_pretty(&SceneFile::from_scene(scene)).expect("scene serialises")
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    scene_from_json(&text).map_err(|e| with_path(path, e))
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    fs::write(path, scene_to_json(scene) + "\n").map_err(|e| io_error(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    }
}

/// On-disk extrinsic: row-major rotation and translation, coop → ego.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrinsicFile {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl ExtrinsicFile {
    pub fn from_transform(t: &RigidTransform) -> Self {
        let r = t.rotation();
        Self {
            rotation: std::array::from_fn(|k| r[(k / 3, k % 3)]),
            translation: (*t.translation()).into(),
        }
    }

    /// Accepts rotations within [`EXTRINSIC_LOAD_TOLERANCE`] of SO(3) and
    /// snaps them back onto it.
    pub fn to_transform(&self) -> Result<RigidTransform> {
        let r = Mat3::from_row_slice(&self.rotation);
        RigidTransform::new_projected(r, Vec3::from(self.translation), EXTRINSIC_LOAD_TOLERANCE)
            .map_err(|e| Error::Parse {
                context: "rotation".into(),
                message: e.to_string(),
            })
    }
}

pub fn extrinsic_from_json(text: &str) -> Result<RigidTransform> {
    serde_json::from_str::<ExtrinsicFile>(text)
        .map_err(|e| json_error("extrinsic", e))?
        .to_transform()
}

pub fn extrinsic_to_json(t: &RigidTransform) -> String {
    serde_json::to_string_pretty(&ExtrinsicFile::from_transform(t)).expect("extrinsic serialises")
}

pub fn read_extrinsic(path: &Path) -> Result<RigidTransform> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    extrinsic_from_json(&text).map_err(|e| with_path(path, e))
}

/// Writes `t` next to `path` and renames it into place, so readers never
/// observe a partial file.
pub fn write_extrinsic_atomic(path: &Path, t: &RigidTransform) -> Result<()> {
    write_atomic(path, &(extrinsic_to_json(t) + "\n"))
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io {
            path: path.display().to_string(),
            message: "not a file path".into(),
        })?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_error(path, e)
    })
}

/// Grid and trial count for the noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sigma_pos: Vec<f64>,
    pub yaw_std_deg: Vec<f64>,
    pub n_trials: usize,
    /// Success threshold on RTE, meters.
    pub lambda: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma_pos: vec![0.0, 0.5, 1.0, 2.0],
            yaw_std_deg: vec![0.0, 10.0, 25.0],
            n_trials: 100,
            lambda: 1.0,
        }
    }
}

/// Everything a CLI run can be configured with, loadable from one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub odist: ODistParams,
    pub top_k: TopK,
    pub noise: NoiseConfig,
    pub synth: SynthConfig,
    pub monitor: MonitorConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            odist: ODistParams::default(),
            top_k: TopK::Largest(DEFAULT_TOP_K),
            noise: NoiseConfig::default(),
            synth: SynthConfig::default(),
            monitor: MonitorConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            odist: self.odist,
            top_k: self.top_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.odist.validate()?;
        self.noise.validate()?;
        self.synth.validate()?;
        self.monitor.validate()?;
        if self.sweep.n_trials == 0 {
            return Err(Error::InvalidConfig(
                "sweep.n_trials must be at least 1".into(),
            ));
        }
        if !(self.sweep.lambda > 0.0) {
            return Err(Error::InvalidConfig("sweep.lambda must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| json_error("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            context: "config".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// TOML for `.toml` files, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let is_toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let parsed = if is_toml {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        };
        parsed.map_err(|e| with_path(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene_pair, ExtrinsicSource};
    use proptest::prelude::*;

    #[test]
    fn scene_round_trip_is_lossless() {
        let p = generate_scene_pair(&SynthConfig {
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        for s in [&p.ego, &p.coop] {
            let back = scene_from_json(&scene_to_json(s)).unwrap();
            assert_eq!(&back, s);
        }
    }

    #[test]
    fn yaw_deg_and_defaults() {
        let s =
            scene_from_json(r#"{"boxes":[{"center":[1,2,0.5],"dims":[4,2,1.5],"yaw_deg":90}]}"#)
                .unwrap();
        let b = &s.boxes[0];
        assert!((b.yaw() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(b.confidence(), 1.0);
        assert_eq!(s.agent_id, "");
    }

    #[test]
    fn errors_name_the_field() {
        let both = r#"{"boxes":[{"center":[0,0,0],"dims":[1,1,1],"yaw":0,"yaw_deg":0}]}"#;
        let e = scene_from_json(both).unwrap_err().to_string();
        assert!(e.contains("boxes[0].yaw"), "{e}");
        let neg = r#"{"boxes":[{"center":[0,0,0],"dims":[1,1,1],"yaw":0},{"center":[0,0,0],"dims":[1,-1,1],"yaw":0}]}"#;
        let e = scene_from_json(neg).unwrap_err().to_string();
        assert!(e.contains("boxes[1].dims"), "{e}");
        let unknown = r#"{"boxes":[{"center":[0,0,0],"dims":[1,1,1],"yaw":0,"heading":1}]}"#;
        let e = scene_from_json(unknown).unwrap_err().to_string();
        assert!(e.contains("heading") && e.contains("line"), "{e}");
    }

    #[test]
    fn extrinsic_tolerance_and_projection() {
        let t = RigidTransform::from_yaw(0.4, Vec3::new(1.0, 2.0, 3.0));
        let mut f = ExtrinsicFile::from_transform(&t);
        f.rotation[0] += 5e-7;
        let loaded = f.to_transform().unwrap();
        let r = loaded.rotation();
        assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
        f.rotation[0] += 1e-3;
        assert!(f.to_transform().is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extrinsic.json");
        let a = RigidTransform::from_yaw(0.1, Vec3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_yaw(2.0, Vec3::new(-4.0, 3.0, 0.5));
        write_extrinsic_atomic(&path, &a).unwrap();
        write_extrinsic_atomic(&path, &b).unwrap();
        let (r, d) = read_extrinsic(&path).unwrap().distance_to(&b);
        assert!(r < 1e-15 && d == 0.0);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn run_config_formats_and_unknown_keys() {
        let toml_text = r#"
top_k = "inf"
[odist]
tau = 2.5
[synth]
n_boxes = 8
coop_transform = { random = { max_translation = 10.0, max_yaw_deg = 90.0 } }
[monitor]
max_retries = 2
"#;
        let c = RunConfig::from_toml(toml_text).unwrap();
        assert_eq!(c.top_k, TopK::All);
        assert_eq!(c.odist.tau, 2.5);
        assert_eq!(c.odist.tau1, ODistParams::default().tau1);
        assert_eq!(c.synth.n_boxes, 8);
        assert_eq!(
            c.synth.coop_transform,
            ExtrinsicSource::Random {
                max_translation: 10.0,
                max_yaw_deg: 90.0
            }
        );
        assert_eq!(c.monitor.max_retries, 2);

        let j = RunConfig::from_json(r#"{"top_k": 7, "odist": {"alpha": 2.0}}"#).unwrap();
        assert_eq!(j.top_k, TopK::Largest(7));
        assert!(RunConfig::from_json(r#"{"odist": {"gamma": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"monitor": {"max_retries": 0}}"#).is_err());
    }

    #[test]
    fn run_config_json_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    proptest! {
        #[test]
        fn extrinsic_round_trip(yaw in -10.0..10.0f64, x in -100.0..100.0f64, y in -100.0..100.0f64, z in -5.0..5.0f64) {
            let t = RigidTransform::from_yaw(yaw, Vec3::new(x, y, z));
            let back = extrinsic_from_json(&extrinsic_to_json(&t)).unwrap();
            let (r, d) = back.distance_to(&t);
            prop_assert!(r < 1e-12 && d < 1e-12);
        }
    }
}
