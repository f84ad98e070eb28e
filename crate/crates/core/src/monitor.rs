//! Boot-time calibration and runtime health monitoring with bounded retries.
//!
//! [`step`] is a pure transition: the caller owns the state, feeds it one
//! frame at a time and persists the extrinsic whenever a
//! [`EventKind::BootCalibrated`] or [`EventKind::Recalibrated`] event appears.

use serde::{Deserialize, Serialize};

use crate::association::{score_alignment, ODistParams, PairScore};
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Scene};
use crate::pipeline::{calibrate, CalibrationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// Acceptance threshold on `D̄` for boot calibration, meters.
    pub theta_boot: f64,
    /// Acceptance threshold on `D̄` for runtime checks, meters.
    pub theta_monitor: f64,
    pub max_retries: usize,
    /// Fewer aligned pairs than this never certify a transform.
    pub min_confidence: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            theta_boot: 0.5,
            theta_monitor: 1.0,
            max_retries: 3,
            min_confidence: 2.0,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_boot > 0.0 && self.theta_monitor > 0.0) {
            return Err(Error::InvalidConfig(
                "monitor thresholds must be positive".into(),
            ));
        }
        if self.max_retries < 1 {
            return Err(Error::InvalidConfig(
                "max_retries must be at least 1".into(),
            ));
        }
        if !(self.min_confidence >= 0.0) {
            return Err(Error::InvalidConfig(
                "min_confidence must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// `(C̄, D̄)`: aligned pair count and their mean distance (∞ when none).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Health {
    pub confidence: f64,
    pub mean_distance: f64,
}

impl Health {
    /// Passes when enough pairs align and their mean distance is within θ.
    pub fn passes(&self, theta: f64, min_confidence: f64) -> bool {
        self.confidence >= min_confidence && self.mean_distance <= theta
    }
}

impl From<&PairScore> for Health {
    fn from(s: &PairScore) -> Self {
        Self {
            confidence: s.confidence,
            mean_distance: s.mean_distance,
        }
    }
}

// Infinite D̄ is written as null.
impl Serialize for Health {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        HealthRepr {
            confidence: self.confidence,
            mean_distance: self.mean_distance.is_finite().then_some(self.mean_distance),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Health {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = HealthRepr::deserialize(d)?;
        Ok(Self {
            confidence: r.confidence,
            mean_distance: r.mean_distance.unwrap_or(f64::INFINITY),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HealthRepr {
    confidence: f64,
    mean_distance: Option<f64>,
}

/// Scores how well `t` aligns the two scenes, without any hypothesis search.
pub fn health_check(ego: &Scene, coop: &Scene, t: &RigidTransform, params: &ODistParams) -> Health {
    Health::from(&score_alignment(ego, coop, t, params))
}

/// One pipeline run inside [`calibrate_with_retries`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    /// 1-based.
    pub attempt: usize,
    pub params: ODistParams,
    pub health: Option<Health>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetryOutcome {
    pub transform: Option<RigidTransform>,
    pub attempts: Vec<Attempt>,
}

/// Runs the pipeline up to `cfg.max_retries` times. Attempt `k` (0-based)
/// uses `calib.odist.widened(k)` and is accepted when its health under the
/// same parameters passes `theta`.
pub fn calibrate_with_retries(
    ego: &Scene,
    coop: &Scene,
    theta: f64,
    cfg: &MonitorConfig,
    calib: &CalibrationConfig,
) -> RetryOutcome {
    let mut attempts = Vec::with_capacity(cfg.max_retries);
    for k in 0..cfg.max_retries {
        let params = calib.odist.widened(k);
        let run = CalibrationConfig {
            odist: params,
            ..*calib
        };
        match calibrate(ego, coop, &run) {
            Ok(report) => {
                let health = health_check(ego, coop, &report.transform, &params);
                attempts.push(Attempt {
                    attempt: k + 1,
                    params,
                    health: Some(health),
                    error: None,
                });
                if health.passes(theta, cfg.min_confidence) {
                    return RetryOutcome {
                        transform: Some(report.transform),
                        attempts,
                    };
                }
            }
            Err(e) => attempts.push(Attempt {
                attempt: k + 1,
                params,
                health: None,
                error: Some(e.to_string()),
            }),
        }
    }
    RetryOutcome {
        transform: None,
        attempts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Uncalibrated,
    Calibrated,
    Degraded,
    /// A stored extrinsic failed boot verification and could not be replaced.
    Alert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorState {
    pub current_extrinsic: Option<RigidTransform>,
    pub status: Status,
    pub last_health: Option<Health>,
    pub frame_count: u64,
    /// Whether the boot check has passed for `current_extrinsic`.
    pub boot_verified: bool,
    /// Reason for the last entry into `Degraded` or `Alert`.
    pub cause: Option<String>,
}

impl Default for MonitorState {
    fn default() -> Self {
        Self::new()
    }
}

impl MonitorState {
    pub fn new() -> Self {
        Self {
            current_extrinsic: None,
            status: Status::Uncalibrated,
            last_health: None,
            frame_count: 0,
            boot_verified: false,
            cause: None,
        }
    }

    /// State seeded from a stored extrinsic; the first frame still runs the
    /// boot check against it.
    pub fn restored(t: RigidTransform) -> Self {
        Self {
            current_extrinsic: Some(t),
            status: Status::Calibrated,
            ..Self::new()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    BootCalibrated,
    HealthOk,
    Recalibrated,
    RetryExhausted,
    AlertRaised,
    DegradedEntered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorEvent {
    pub frame_id: u64,
    pub kind: EventKind,
    pub health: Option<Health>,
    pub attempts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

fn event(frame_id: u64, kind: EventKind, health: Option<Health>, attempts: usize) -> MonitorEvent {
    MonitorEvent {
        frame_id,
        kind,
        health,
        attempts,
        detail: None,
    }
}

fn last_health(outcome: &RetryOutcome) -> Option<Health> {
    outcome.attempts.iter().rev().find_map(|a| a.health)
}

/// Advances the monitor by one frame.
pub fn step(
    state: &MonitorState,
    ego: &Scene,
    coop: &Scene,
    cfg: &MonitorConfig,
    calib: &CalibrationConfig,
) -> (MonitorState, Vec<MonitorEvent>) {
    let frame = ego.frame_id;
    let mut next = state.clone();
    next.frame_count += 1;
    let mut events = Vec::new();

    if !state.boot_verified {
        let current = state
            .current_extrinsic
            .map(|t| health_check(ego, coop, &t, &calib.odist));
        if let Some(h) = current.filter(|h| h.passes(cfg.theta_boot, cfg.min_confidence)) {
            next.status = Status::Calibrated;
            next.boot_verified = true;
            next.last_health = Some(h);
            next.cause = None;
            events.push(event(frame, EventKind::HealthOk, Some(h), 0));
            return (next, events);
        }
        let outcome = calibrate_with_retries(ego, coop, cfg.theta_boot, cfg, calib);
        let n = outcome.attempts.len();
        match outcome.transform {
            Some(t) => {
                let h = last_health(&outcome);
                next.current_extrinsic = Some(t);
                next.status = Status::Calibrated;
                next.boot_verified = true;
                next.last_health = h;
                next.cause = None;
                events.push(event(frame, EventKind::BootCalibrated, h, n));
            }
            None => {
                let h = last_health(&outcome).or(current);
                next.last_health = h;
                events.push(event(frame, EventKind::RetryExhausted, h, n));
                let mut alert = event(frame, EventKind::AlertRaised, h, n);
                if state.current_extrinsic.is_some() {
                    next.status = Status::Alert;
                    alert.detail = Some("stored extrinsic failed boot check".into());
                } else {
                    next.status = Status::Uncalibrated;
                    alert.detail = Some("boot calibration failed".into());
                }
                next.cause = alert.detail.clone();
                events.push(alert);
            }
        }
        return (next, events);
    }

    let t_cur = state
        .current_extrinsic
        .expect("boot-verified state always holds an extrinsic");
    let h = health_check(ego, coop, &t_cur, &calib.odist);
    if h.passes(cfg.theta_monitor, cfg.min_confidence) {
        next.last_health = Some(h);
        next.status = Status::Calibrated;
        next.cause = None;
        events.push(event(frame, EventKind::HealthOk, Some(h), 0));
        return (next, events);
    }

    let outcome = calibrate_with_retries(ego, coop, cfg.theta_monitor, cfg, calib);
    let n = outcome.attempts.len();
    match outcome.transform {
        Some(t) => {
            let h = last_health(&outcome);
            next.current_extrinsic = Some(t);
            next.status = Status::Calibrated;
            next.last_health = h;
            next.cause = None;
            events.push(event(frame, EventKind::Recalibrated, h, n));
        }
        None => {
            let hl = last_health(&outcome).or(Some(h));
            next.last_health = hl;
            events.push(event(frame, EventKind::RetryExhausted, hl, n));
            if state.status != Status::Degraded {
                let mut degraded = event(frame, EventKind::DegradedEntered, hl, n);
                degraded.detail = Some("recalibration failed".into());
                next.cause = degraded.detail.clone();
                events.push(degraded);
            }
            next.status = Status::Degraded;
        }
    }
    (next, events)
}

/// Transition for a frame whose scenes could not be read: the extrinsic is
/// kept and the monitor enters `Degraded` (once).
pub fn unreadable_frame(
    state: &MonitorState,
    frame_id: u64,
    reason: &str,
) -> (MonitorState, Vec<MonitorEvent>) {
    let mut next = state.clone();
    next.frame_count += 1;
    let mut events = Vec::new();
    if state.status != Status::Degraded {
        let mut e = event(frame_id, EventKind::DegradedEntered, None, 0);
        e.detail = Some(format!("unreadable frame: {reason}"));
        next.cause = e.detail.clone();
        events.push(e);
        if state.current_extrinsic.is_some() {
            next.status = Status::Degraded;
        }
    }
    (next, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DetectionBox, Vec3};

    fn ego() -> Scene {
        let b = |c: [f64; 3], d: [f64; 3], y: f64| {
            DetectionBox::ground_truth(Vec3::from(c), Vec3::from(d), y).unwrap()
        };
        Scene::new(
            "ego",
            0,
            vec![
                b([0.0, 0.0, 0.8], [4.5, 1.9, 1.6], 0.3),
                b([12.0, 3.0, 0.9], [5.2, 2.1, 1.9], 1.9),
                b([-7.0, 9.5, 1.0], [3.9, 1.7, 1.5], 4.0),
                b([4.0, -13.0, 1.4], [11.0, 2.5, 3.2], 2.6),
                b([21.0, -4.0, 0.6], [6.8, 2.7, 1.7], 5.5),
            ],
        )
    }

    fn truth() -> RigidTransform {
        RigidTransform::from_yaw(0.7, Vec3::new(8.0, -3.0, 0.2))
    }

    fn coop_for(t: &RigidTransform) -> Scene {
        let mut s = ego().transformed(&t.inverse());
        s.agent_id = "coop".into();
        s
    }

    #[test]
    fn health_at_truth_is_perfect() {
        let h = health_check(
            &ego(),
            &coop_for(&truth()),
            &truth(),
            &ODistParams::default(),
        );
        assert_eq!(h.confidence, 5.0);
        assert!(h.mean_distance < 1e-9);
    }

    #[test]
    fn health_single_pair_translation_offset() {
        let e = Scene::new("e", 0, vec![ego().boxes[0].clone()]);
        let off = RigidTransform::from_translation(Vec3::new(0.4, 0.0, 0.0));
        let h = health_check(&e, &e, &off, &ODistParams::default());
        assert_eq!(h.confidence, 1.0);
        assert!((h.mean_distance - 0.8).abs() < 1e-12);
    }

    #[test]
    fn health_gross_error() {
        let off = truth().compose(&RigidTransform::from_translation(Vec3::new(10.0, 0.0, 0.0)));
        let h = health_check(&ego(), &coop_for(&truth()), &off, &ODistParams::default());
        assert_eq!(h.confidence, 0.0);
        assert!(h.mean_distance.is_infinite());
        assert!(!h.passes(1e9, 0.0));
    }

    #[test]
    fn retries_clean_first_attempt() {
        let out = calibrate_with_retries(
            &ego(),
            &coop_for(&truth()),
            0.5,
            &MonitorConfig::default(),
            &CalibrationConfig::default(),
        );
        assert_eq!(out.attempts.len(), 1);
        let (r, t) = out.transform.unwrap().distance_to(&truth());
        assert!(r < 1e-9 && t < 1e-9);
    }

    #[test]
    fn retries_exhaust_without_covisibility() {
        let far = ego().transformed(&RigidTransform::from_translation(Vec3::new(
            500.0, 0.0, 0.0,
        )));
        let coop = Scene::new("coop", 0, vec![far.boxes[0].clone()]);
        let lonely = Scene::new("ego", 0, vec![]);
        let cfg = MonitorConfig {
            max_retries: 3,
            ..Default::default()
        };
        let out = calibrate_with_retries(&lonely, &coop, 0.5, &cfg, &CalibrationConfig::default());
        assert!(out.transform.is_none());
        assert_eq!(out.attempts.len(), 3);
        assert!(out.attempts.iter().all(|a| a.error.is_some()));
    }

    #[test]
    fn boot_then_health_ok() {
        let cfg = MonitorConfig::default();
        let calib = CalibrationConfig::default();
        let coop = coop_for(&truth());
        let (s1, ev) = step(&MonitorState::new(), &ego(), &coop, &cfg, &calib);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, EventKind::BootCalibrated);
        assert_eq!(s1.status, Status::Calibrated);
        let (s2, ev) = step(&s1, &ego(), &coop, &cfg, &calib);
        assert_eq!(
            ev.iter().map(|e| e.kind).collect::<Vec<_>>(),
            vec![EventKind::HealthOk]
        );
        assert_eq!(s2.current_extrinsic, s1.current_extrinsic);
        assert_eq!(s2.status, s1.status);
        assert_eq!(s2.frame_count, s1.frame_count + 1);
    }

    #[test]
    fn drift_triggers_recalibration() {
        let cfg = MonitorConfig::default();
        let calib = CalibrationConfig::default();
        let (s1, _) = step(
            &MonitorState::new(),
            &ego(),
            &coop_for(&truth()),
            &cfg,
            &calib,
        );
        let drifted = truth().compose(&RigidTransform::from_translation(Vec3::new(2.0, 0.0, 0.0)));
        let (s2, ev) = step(&s1, &ego(), &coop_for(&drifted), &cfg, &calib);
        assert_eq!(
            ev.iter().map(|e| e.kind).collect::<Vec<_>>(),
            vec![EventKind::Recalibrated]
        );
        let (r, t) = s2.current_extrinsic.unwrap().distance_to(&drifted);
        assert!(r < 1e-6 && t < 1e-6);
    }

    #[test]
    fn failed_recalibration_keeps_extrinsic() {
        let cfg = MonitorConfig::default();
        let calib = CalibrationConfig::default();
        let (s1, _) = step(
            &MonitorState::new(),
            &ego(),
            &coop_for(&truth()),
            &cfg,
            &calib,
        );
        let empty = Scene::new("coop", 1, vec![]);
        let (s2, ev) = step(&s1, &ego(), &empty, &cfg, &calib);
        assert_eq!(
            ev.iter().map(|e| e.kind).collect::<Vec<_>>(),
            vec![EventKind::RetryExhausted, EventKind::DegradedEntered]
        );
        assert_eq!(s2.status, Status::Degraded);
        assert_eq!(s2.current_extrinsic, s1.current_extrinsic);
        let (s3, ev) = step(&s2, &ego(), &empty, &cfg, &calib);
        assert_eq!(
            ev.iter().map(|e| e.kind).collect::<Vec<_>>(),
            vec![EventKind::RetryExhausted]
        );
        assert_eq!(s3.current_extrinsic, s1.current_extrinsic);
        // Recovery once the scenes agree again.
        let (s4, ev) = step(&s3, &ego(), &coop_for(&truth()), &cfg, &calib);
        assert_eq!(ev[0].kind, EventKind::HealthOk);
        assert_eq!(s4.status, Status::Calibrated);
    }

    #[test]
    fn boot_failure_raises_alert() {
        let cfg = MonitorConfig::default();
        let calib = CalibrationConfig::default();
        let empty = Scene::new("coop", 0, vec![]);
        let (s, ev) = step(&MonitorState::new(), &ego(), &empty, &cfg, &calib);
        assert_eq!(
            ev.iter().map(|e| e.kind).collect::<Vec<_>>(),
            vec![EventKind::RetryExhausted, EventKind::AlertRaised]
        );
        assert_eq!(s.status, Status::Uncalibrated);
        assert!(s.current_extrinsic.is_none());

        let (s, _) = step(
            &MonitorState::restored(truth()),
            &ego(),
            &empty,
            &cfg,
            &calib,
        );
        assert_eq!(s.status, Status::Alert);
        assert_eq!(s.current_extrinsic, Some(truth()));
    }

    #[test]
    fn restored_extrinsic_verified_without_recalibration() {
        let cfg = MonitorConfig::default();
        let (s, ev) = step(
            &MonitorState::restored(truth()),
            &ego(),
            &coop_for(&truth()),
            &cfg,
            &CalibrationConfig::default(),
        );
        assert_eq!(
            ev.iter().map(|e| e.kind).collect::<Vec<_>>(),
            vec![EventKind::HealthOk]
        );
        assert!(s.boot_verified);
        assert_eq!(s.current_extrinsic, Some(truth()));
    }

    #[test]
    fn state_serde_round_trip() {
        let (s, ev) = step(
            &MonitorState::new(),
            &ego(),
            &Scene::new("coop", 0, vec![]),
            &MonitorConfig::default(),
            &CalibrationConfig::default(),
        );
        let json = serde_json::to_string(&s).unwrap();
        let back: MonitorState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let line = serde_json::to_string(&ev[0]).unwrap();
        let back: MonitorEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back, ev[0]);
        let h = Health {
            confidence: 0.0,
            mean_distance: f64::INFINITY,
        };
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(json, r#"{"confidence":0.0,"mean_distance":null}"#);
        assert_eq!(serde_json::from_str::<Health>(&json).unwrap(), h);
    }
}
