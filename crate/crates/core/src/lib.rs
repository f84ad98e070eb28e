//! Extrinsic calibration between two LiDAR agents from their 3D detection
//! boxes alone, with no initial pose.
//!
//! Boxes from the ego and cooperative agents are associated by scoring every
//! candidate pair's implied transform against the rest of the scene, solving
//! a maximum-weight assignment over those scores, and fitting the final
//! transform to the matched box corners with confidence-weighted SVD.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod association;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod monitor;
pub mod pipeline;
pub mod registration;
pub mod synth;

pub use assignment::solve_assignment;
pub use association::{
    associate, box_distance, build_affinity, odist, score_alignment, top_k_by_volume,
    AffinityMatrix, Match, MatchSet, ODistParams, TopK,
};
pub use error::{Error, Result};
pub use geometry::{CornerMatrix, DetectionBox, Mat3, RigidTransform, Scene, Vec3};
pub use metrics::{rre, rte, summarize, MetricSummary, TrialError};
pub use monitor::{
    health_check, step, EventKind, MonitorConfig, MonitorEvent, MonitorState, Status,
};
pub use pipeline::{calibrate, CalibrationConfig, CalibrationReport};
pub use registration::{
    build_feature_clouds, pair_hypothesis, weighted_kabsch, WeightedCorrespondences,
};
pub use synth::{
    generate_scene_pair, inject_noise, noise_sweep, NoiseConfig, ScenePair, SynthConfig,
};
