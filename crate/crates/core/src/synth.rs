//! Synthetic scene pairs with known extrinsics, detection-noise injection
//! and the noise-sweep experiment.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::ODistParams;
use crate::error::{Error, Result};
use crate::geometry::{DetectionBox, RigidTransform, Scene, Vec3};
use crate::metrics::{summarize, MetricSummary, TrialError};
use crate::pipeline::{calibrate, CalibrationConfig};

/// How the ground-truth coop → ego extrinsic is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtrinsicSource {
    Fixed(RigidTransform),
    /// Yaw uniform in `[0, max_yaw_deg)`, horizontal offset uniform in a
    /// disc of radius `max_translation`, vertical offset within ±1 m.
    Random {
        max_translation: f64,
        max_yaw_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_boxes: usize,
    /// `[x_range, y_range]` of box centers, meters.
    pub area: [[f64; 2]; 2],
    /// Per-axis `[min, max]` of length, width, height.
    pub dims_range: [[f64; 2]; 3],
    /// Minimum horizontal distance between box centers.
    pub min_separation: f64,
    pub seed: u64,
    pub coop_transform: ExtrinsicSource,
    /// Fraction of boxes the cooperative agent sees, in (0, 1].
    pub coop_visibility: f64,
    /// Reorder the cooperative scene so indices carry no correspondence.
    pub shuffle_coop: bool,
    /// Reject layouts where two boxes see near-identical distance profiles.
    pub generic_guard: bool,
    /// Threshold of the generic-position guard, meters.
    pub guard_tolerance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_boxes: 15,
            area: [[-40.0, 40.0], [-40.0, 40.0]],
            dims_range: [[3.5, 8.0], [1.6, 2.8], [1.4, 3.5]],
            min_separation: 8.0,
            seed: 0,
            coop_transform: ExtrinsicSource::Random {
                max_translation: 30.0,
                max_yaw_deg: 360.0,
            },
            coop_visibility: 0.8,
            shuffle_coop: true,
            generic_guard: true,
            guard_tolerance: ODistParams::default().tau1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_boxes == 0 {
            return bad("n_boxes must be at least 1".into());
        }
        if !(self.min_separation > 0.0) {
            return bad(format!(
                "min_separation must be positive, got {}",
                self.min_separation
            ));
        }
        for (axis, r) in self.area.iter().enumerate() {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return bad(format!("area[{axis}] must be an increasing finite range"));
            }
        }
        for (axis, r) in self.dims_range.iter().enumerate() {
            if !(r[0] > 0.0 && r[1].is_finite() && r[0] <= r[1]) {
                return bad(format!("dims_range[{axis}] must satisfy 0 < min <= max"));
            }
        }
        if !(self.coop_visibility > 0.0 && self.coop_visibility <= 1.0) {
            return bad(format!(
                "coop_visibility must be in (0, 1], got {}",
                self.coop_visibility
            ));
        }
        if !(self.guard_tolerance >= 0.0) {
            return bad("guard_tolerance must be non-negative".into());
        }
        if let ExtrinsicSource::Random {
            max_translation,
            max_yaw_deg,
        } = self.coop_transform
        {
            if !(max_translation >= 0.0
                && max_yaw_deg >= 0.0
                && max_translation.is_finite()
                && max_yaw_deg.is_finite())
            {
                return bad("random extrinsic bounds must be finite and non-negative".into());
            }
        }
        Ok(())
    }
}

/// A generated ego/coop pair with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub ego: Scene,
    pub coop: Scene,
    /// Maps coop-frame points into the ego frame.
    pub truth: RigidTransform,
    /// `coop_to_ego[j]` is the ego index of coop box `j`.
    pub coop_to_ego: Vec<usize>,
}

pub fn generate_scene_pair(cfg: &SynthConfig) -> Result<ScenePair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_boxes;
    let budget = 10 * n * 100;
    let mut attempts = 0usize;

    let centers = loop {
        match place_centers(cfg, &mut rng, budget, &mut attempts) {
            Some(c) if !cfg.generic_guard || is_generic(&c, cfg.guard_tolerance) => break c,
            Some(_) => {}
            None => {
                return Err(Error::PlacementFailure {
                    n_boxes: n,
                    attempts,
                })
            }
        }
        if attempts >= budget {
            return Err(Error::PlacementFailure {
                n_boxes: n,
                attempts,
            });
        }
    };

    let boxes: Vec<DetectionBox> = centers
        .iter()
        .map(|c| {
            let d = Vec3::new(
                uniform(&mut rng, cfg.dims_range[0]),
                uniform(&mut rng, cfg.dims_range[1]),
                uniform(&mut rng, cfg.dims_range[2]),
            );
            let yaw = rng.random_range(0.0..TAU);
            DetectionBox::ground_truth(Vec3::new(c[0], c[1], d.z / 2.0), d, yaw)
        })
        .collect::<Result<_>>()?;

    let truth = match cfg.coop_transform {
        ExtrinsicSource::Fixed(t) => t,
        ExtrinsicSource::Random {
            max_translation,
            max_yaw_deg,
        } => {
            let yaw = if max_yaw_deg > 0.0 {
                rng.random_range(0.0..max_yaw_deg.to_radians())
            } else {
                0.0
            };
            let r = max_translation * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..TAU);
            let z = max_translation.min(1.0) * rng.random_range(-1.0..=1.0);
            RigidTransform::from_yaw(yaw, Vec3::new(r * phi.cos(), r * phi.sin(), z))
        }
    };

    let n_coop = ((cfg.coop_visibility * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    partial_shuffle(&mut order, n_coop, &mut rng);
    let mut coop_to_ego = order[..n_coop].to_vec();
    if !cfg.shuffle_coop {
        coop_to_ego.sort_unstable();
    }

    let to_coop = truth.inverse();
    let coop_boxes = coop_to_ego
        .iter()
        .map(|&i| to_coop.transform_box(&boxes[i]))
        .collect();
    Ok(ScenePair {
        ego: Scene::new("ego", cfg.seed, boxes),
        coop: Scene::new("coop", cfg.seed, coop_boxes),
        truth,
        coop_to_ego,
    })
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn partial_shuffle(v: &mut [usize], k: usize, rng: &mut ChaCha8Rng) {
    for i in 0..k {
        let j = rng.random_range(i..v.len());
        v.swap(i, j);
    }
}

/// Sequential rejection sampling; `None` when the attempt budget runs out.
fn place_centers(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    budget: usize,
    attempts: &mut usize,
) -> Option<Vec<[f64; 2]>> {
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(cfg.n_boxes);
    let sep2 = cfg.min_separation * cfg.min_separation;
    while centers.len() < cfg.n_boxes {
        if *attempts >= budget {
            return None;
        }
        *attempts += 1;
        let c = [uniform(rng, cfg.area[0]), uniform(rng, cfg.area[1])];
        if centers
            .iter()
            .all(|o| (o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2) >= sep2)
        {
            centers.push(c);
        }
    }
    Some(centers)
}

/// False when two boxes have sorted distance profiles that agree within
/// `tol` everywhere, which would make them interchangeable to the matcher.
fn is_generic(centers: &[[f64; 2]], tol: f64) -> bool {
    let profiles: Vec<Vec<f64>> = centers
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut d: Vec<f64> = centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            d
        })
        .collect();
    for i in 0..profiles.len() {
        for j in i + 1..profiles.len() {
            if profiles[i]
                .iter()
                .zip(&profiles[j])
                .all(|(a, b)| (a - b).abs() < tol)
            {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Std of the zero-mean Gaussian added to each center coordinate, meters.
    pub sigma_pos: f64,
    /// Circular std of the zero-mean von Mises added to yaw, degrees.
    pub yaw_std_deg: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_pos: 0.0,
            yaw_std_deg: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn new(sigma_pos: f64, yaw_std_deg: f64, seed: u64) -> Self {
        Self {
            sigma_pos,
            yaw_std_deg,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_pos >= 0.0 && self.sigma_pos.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_pos must be >= 0, got {}",
                self.sigma_pos
            )));
        }
        if !(self.yaw_std_deg >= 0.0 && self.yaw_std_deg.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "yaw std must be >= 0, got {}",
                self.yaw_std_deg
            )));
        }
        Ok(())
    }
}

/// Perturbs every box center and yaw independently; dims are kept.
pub fn inject_noise(scene: &Scene, noise: &NoiseConfig) -> Result<Scene> {
    noise.validate()?;
    if noise.sigma_pos == 0.0 && noise.yaw_std_deg == 0.0 {
        return Ok(scene.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let pos = Normal::new(0.0, noise.sigma_pos).expect("validated sigma");
    let yaw = VonMises::from_circular_std(noise.yaw_std_deg.to_radians());
    let boxes = scene
        .boxes
        .iter()
        .map(|b| {
            let dc = Vec3::new(
                pos.sample(&mut rng),
                pos.sample(&mut rng),
                pos.sample(&mut rng),
            );
            let dy = yaw.sample(&mut rng);
            b.with_pose(b.center() + dc, b.yaw() + dy)
        })
        .collect();
    Ok(Scene {
        agent_id: scene.agent_id.clone(),
        frame_id: scene.frame_id,
        boxes,
    })
}

/// Mean resultant length `I1(κ)/I0(κ)` of a von Mises distribution.
pub fn bessel_ratio(kappa: f64) -> f64 {
    if kappa <= 0.0 {
        return 0.0;
    }
    if kappa > 50.0 {
        let k = 1.0 / kappa;
        return 1.0
            - k / 2.0
            - k * k / 8.0
            - k.powi(3) / 8.0
            - 25.0 * k.powi(4) / 128.0
            - 13.0 * k.powi(5) / 32.0;
    }
    // Power series of I0 and I1 share the factor (κ/2)^(2m) / (m!)^2.
    let q = kappa * kappa / 4.0;
    let (mut i0, mut i1) = (0.0, 0.0);
    let mut term = 1.0;
    for m in 0..500 {
        let mf = m as f64;
        i0 += term;
        i1 += term / (mf + 1.0);
        term *= q / ((mf + 1.0) * (mf + 1.0));
        if term < 1e-17 * i0 {
            break;
        }
    }
    i1 * kappa / 2.0 / i0
}

/// Concentration whose circular std `sqrt(-2 ln A(κ))` equals `s` radians.
pub fn kappa_for_circular_std(s: f64) -> f64 {
    if s <= 0.0 {
        return f64::INFINITY;
    }
    let target = (-s * s / 2.0).exp();
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    if bessel_ratio(lo.exp()) >= target {
        return 0.0;
    }
    if bessel_ratio(hi.exp()) <= target {
        // Far in the normal limit: 1 - A(κ) ≈ 1/(2κ) ≈ s²/2.
        return 1.0 / (s * s);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_ratio(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Zero-mean von Mises angle sampler (Best & Fisher rejection scheme).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VonMises {
    kappa: f64,
}

impl VonMises {
    pub fn new(kappa: f64) -> Self {
        Self { kappa }
    }

    pub fn from_circular_std(s: f64) -> Self {
        Self::new(kappa_for_circular_std(s))
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl Distribution<f64> for VonMises {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = self.kappa;
        if k.is_infinite() {
            return 0.0;
        }
        if k < 1e-12 {
            return rng.random_range(-PI..PI);
        }
        if k > 1e6 {
            let n = Normal::new(0.0, 1.0 / k.sqrt()).expect("finite std");
            return n.sample(rng);
        }
        let tau = 1.0 + (1.0 + 4.0 * k * k).sqrt();
        let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * k);
        let r = (1.0 + rho * rho) / (2.0 * rho);
        loop {
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let u3: f64 = rng.random();
            let z = (PI * u1).cos();
            let f = (1.0 + r * z) / (r + z);
            let c = k * (r - f);
            if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
                let theta = f.clamp(-1.0, 1.0).acos();
                return if u3 > 0.5 { theta } else { -theta };
            }
        }
    }
}

/// Splitmix64 finaliser over a sequence of words; used for per-trial seeds.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        h = h.wrapping_add(w).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const EGO_STREAM: u64 = 1;
const COOP_STREAM: u64 = 2;

/// One noisy trial: scene from `(base.seed, trial)`, independent noise on
/// each side from `(noise.seed, trial, side)`.
pub fn run_trial(
    base: &SynthConfig,
    noise: &NoiseConfig,
    trial: u64,
    calib: &CalibrationConfig,
) -> Result<TrialError> {
    let cfg = SynthConfig {
        seed: mix_seed(&[base.seed, trial]),
        ..base.clone()
    };
    let pair = generate_scene_pair(&cfg)?;
    let side = |stream| NoiseConfig {
        seed: mix_seed(&[noise.seed, trial, stream]),
        ..*noise
    };
    let ego = inject_noise(&pair.ego, &side(EGO_STREAM))?;
    let coop = inject_noise(&pair.coop, &side(COOP_STREAM))?;
    Ok(match calibrate(&ego, &coop, calib) {
        Ok(report) => TrialError::from_transforms(&pair.truth, &report.transform),
        Err(_) => TrialError::solver_failure(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma_pos: f64,
    pub yaw_std_deg: f64,
    pub summary: MetricSummary,
}

/// Runs `n_trials` per grid cell and summarises each cell at `lambda`.
/// Every cell reuses the same scenes, so rows differ only by noise level.
pub fn noise_sweep(
    grid: &[NoiseConfig],
    base: &SynthConfig,
    n_trials: usize,
    lambda: f64,
    calib: &CalibrationConfig,
) -> Result<Vec<SweepRow>> {
    sweep_trials(grid, base, n_trials, calib)?
        .iter()
        .map(|(noise, trials)| {
            summarize(trials, lambda).map(|summary| SweepRow {
                sigma_pos: noise.sigma_pos,
                yaw_std_deg: noise.yaw_std_deg,
                summary,
            })
        })
        .collect()
}

/// Raw per-trial errors for each grid cell, for summarising at several λ.
pub fn sweep_trials(
    grid: &[NoiseConfig],
    base: &SynthConfig,
    n_trials: usize,
    calib: &CalibrationConfig,
) -> Result<Vec<(NoiseConfig, Vec<TrialError>)>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("noise grid is empty".into()));
    }
    if n_trials == 0 {
        return Err(Error::EmptyTrialSet);
    }
    base.validate()?;
    calib.odist.validate()?;
    for n in grid {
        n.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|c| (0..n_trials as u64).map(move |t| (c, t)))
        .collect();
    let results: Vec<TrialError> = jobs
        .par_iter()
        .map(|&(c, t)| {
            run_trial(base, &grid[c], t, calib).unwrap_or_else(|_| TrialError::solver_failure())
        })
        .collect();
    Ok(grid
        .iter()
        .zip(results.chunks(n_trials))
        .map(|(n, chunk)| (*n, chunk.to_vec()))
        .collect())
}

/// Scripted frame streams for exercising the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// Fixed extrinsic throughout.
    Clean,
    /// The coop sensor shifts 2 m along its x axis from frame `at` on.
    Drift { at: u64 },
    /// From frame `at` on the coop agent sees an unrelated scene.
    LostCoVisibility { at: u64 },
}

/// Offset applied by [`StreamKind::Drift`], meters along the coop x axis.
pub const DRIFT_OFFSET: f64 = 2.0;

/// One `(ego, coop)` pair per frame plus the true extrinsic of each frame.
/// Every frame has a fresh layout drawn from `(cfg.seed, frame)`; the
/// extrinsic is drawn once from `cfg.seed`.
pub fn scripted_stream(
    kind: StreamKind,
    n_frames: u64,
    cfg: &SynthConfig,
) -> Result<Vec<(Scene, Scene, RigidTransform)>> {
    let truth = generate_scene_pair(cfg)?.truth;
    let drifted = truth.compose(&RigidTransform::from_translation(Vec3::new(
        DRIFT_OFFSET,
        0.0,
        0.0,
    )));
    (0..n_frames)
        .map(|f| {
            let t = match kind {
                StreamKind::Drift { at } if f >= at => drifted,
                _ => truth,
            };
            let frame_cfg = SynthConfig {
                seed: mix_seed(&[cfg.seed, f]),
                coop_transform: ExtrinsicSource::Fixed(t),
                ..cfg.clone()
            };
            let pair = generate_scene_pair(&frame_cfg)?;
            let mut coop = match kind {
                StreamKind::LostCoVisibility { at } if f >= at => {
                    let other = SynthConfig {
                        seed: mix_seed(&[cfg.seed, f, u64::MAX]),
                        ..frame_cfg
                    };
                    generate_scene_pair(&other)?.coop
                }
                _ => pair.coop,
            };
            let mut ego = pair.ego;
            ego.frame_id = f;
            coop.frame_id = f;
            Ok((ego, coop, t))
        })
        .collect()
}

/// Cartesian product of position and yaw noise levels, row-major in σ.
pub fn noise_grid(sigmas: &[f64], yaw_stds_deg: &[f64], seed: u64) -> Vec<NoiseConfig> {
    sigmas
        .iter()
        .flat_map(|&s| {
            yaw_stds_deg
                .iter()
                .map(move |&y| NoiseConfig::new(s, y, seed))
        })
        .collect()
}
