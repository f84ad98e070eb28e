//! End-to-end calibration of one frame: top-K filtering, association,
//! weighted feature clouds and the weighted SVD solve.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::association::{
    associate_detailed, score_alignment, top_k_indices, Match, ODistParams, TopK,
};
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Scene};
use crate::registration::{build_feature_clouds, weighted_kabsch};

/// Default number of largest boxes kept per scene.
pub const DEFAULT_TOP_K: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub odist: ODistParams,
    pub top_k: TopK,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            odist: ODistParams::default(),
            top_k: TopK::Largest(DEFAULT_TOP_K),
        }
    }
}

/// Result of calibrating one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    /// Maps cooperative-frame points into the ego frame.
    pub transform: RigidTransform,
    /// Matches in the indices of the input (unfiltered) scenes.
    pub matches: Vec<Match>,
    /// Weighted RMS corner residual of the final solve, meters.
    pub rms_residual: f64,
    /// `C̄` of the final transform over the filtered scenes.
    pub confidence: f64,
    /// `D̄` of the final transform over the filtered scenes; `None` if no
    /// pair falls within τ.
    pub mean_distance: Option<f64>,
    #[serde(rename = "elapsed_s", serialize_with = "as_secs")]
    pub elapsed: Duration,
}

fn as_secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Estimates the coop → ego extrinsic from the two scenes' boxes alone.
pub fn calibrate(ego: &Scene, coop: &Scene, cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    let start = Instant::now();
    cfg.odist.validate()?;
    let ego_keep = top_k_indices(ego, cfg.top_k);
    let coop_keep = top_k_indices(coop, cfg.top_k);
    let ego_f = subset(ego, &ego_keep);
    let coop_f = subset(coop, &coop_keep);
    if ego_f.is_empty() || coop_f.is_empty() {
        return Err(Error::NoCoVisibleObjects);
    }

    let association = associate_detailed(&ego_f, &coop_f, &cfg.odist)?;
    let clouds = build_feature_clouds(&association.matches, &ego_f, &coop_f)?;
    let reg = weighted_kabsch(&clouds)?;
    let health = score_alignment(&ego_f, &coop_f, &reg.transform, &cfg.odist);

    let matches = association
        .matches
        .iter()
        .map(|m| Match {
            ego_index: ego_keep[m.ego_index],
            coop_index: coop_keep[m.coop_index],
            ..*m
        })
        .collect();
    Ok(CalibrationReport {
        transform: reg.transform,
        matches,
        rms_residual: reg.rms_residual,
        confidence: health.confidence,
        mean_distance: health
            .mean_distance
            .is_finite()
            .then_some(health.mean_distance),
        elapsed: start.elapsed(),
    })
}

fn subset(scene: &Scene, keep: &[usize]) -> Scene {
    Scene {
        agent_id: scene.agent_id.clone(),
        frame_id: scene.frame_id,
        boxes: keep.iter().map(|&i| scene.boxes[i].clone()).collect(),
    }
}
