//! Scene-level object association.
//!
//! Every candidate pair (ego box i, coop box j) yields a hypothesis `F` that
//! would align the two boxes. Under `F` the whole coop scene is carried into
//! the ego frame and scored by how many boxes line up (the count `C̄`) and
//! how well (their mean box distance `D̄`). Candidates with `D̄ < τ₁` enter
//! the affinity matrix with weight `C̄`; a maximum-weight assignment over
//! that matrix gives the co-visible object pairs.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::solve_assignment;
use crate::error::{Error, Result};
use crate::geometry::{CornerMatrix, DetectionBox, RigidTransform, Scene, Vec3};
use crate::registration::pair_hypothesis;

/// Thresholds and weights of the box distance and oDist scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ODistParams {
    /// Per-pair admission threshold on the box distance, meters.
    pub tau: f64,
    /// Threshold on a candidate's mean distance `D̄`, meters.
    pub tau1: f64,
    /// Weight on the center distance.
    pub alpha: f64,
    /// Weight on the corner-matrix Frobenius distance.
    pub beta: f64,
    /// Also try each coop box with its heading flipped by π.
    pub yaw_flip: bool,
}

pub const TAU_MAX: f64 = 3.0;
pub const TAU1_MAX: f64 = 2.0;

impl Default for ODistParams {
    fn default() -> Self {
        Self {
            tau: 3.0,
            tau1: 1.5,
            alpha: 1.0,
            beta: 1.0 / 8f64.sqrt(),
            yaw_flip: true,
        }
    }
}

impl ODistParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.tau > 0.0 && self.tau <= TAU_MAX) {
            return bad(format!("tau must lie in (0, {TAU_MAX}], got {}", self.tau));
        }
        if !(self.tau1 > 0.0 && self.tau1 <= TAU1_MAX) {
            return bad(format!(
                "tau1 must lie in (0, {TAU1_MAX}], got {}",
                self.tau1
            ));
        }
        if self.tau1 > self.tau {
            return bad(format!(
                "tau1 ({}) must not exceed tau ({})",
                self.tau1, self.tau
            ));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0)
            || !self.alpha.is_finite()
            || !self.beta.is_finite()
        {
            return bad(format!(
                "alpha and beta must be non-negative with a positive sum, got {} and {}",
                self.alpha, self.beta
            ));
        }
        Ok(())
    }

    /// Thresholds widened by `(1 + 0.25·attempt)`, capped at their maxima.
    pub fn widened(&self, attempt: usize) -> Self {
        let f = 1.0 + 0.25 * attempt as f64;
        let tau = (self.tau * f).min(TAU_MAX);
        let tau1 = (self.tau1 * f).min(TAU1_MAX).min(tau);
        Self { tau, tau1, ..*self }
    }
}

/// `α‖p_a − p_b‖ + β‖corners(a) − corners(b)‖_F` for two boxes in one frame.
pub fn box_distance(a: &DetectionBox, b: &DetectionBox, params: &ODistParams) -> f64 {
    params.alpha * (a.center() - b.center()).norm()
        + params.beta * a.corners().frobenius_distance(&b.corners())
}

/// A box reduced to what the scoring needs.
#[derive(Debug, Clone, Copy)]
struct Placed {
    center: Vec3,
    corners: CornerMatrix,
}

impl Placed {
    fn of(b: &DetectionBox) -> Self {
        Self {
            center: *b.center(),
            corners: b.corners(),
        }
    }
}

/// Box distance with optional heading-flip tolerance on the coop side.
/// Returns the distance and whether the flipped labelling was the closer one.
fn placed_distance(
    e: &Placed,
    c: &Placed,
    params: &ODistParams,
    bound: f64,
) -> Option<(f64, bool)> {
    let center = params.alpha * (e.center - c.center).norm();
    if center > bound {
        return None;
    }
    let direct = e.corners.frobenius_distance(&c.corners);
    let (corner, flipped) = if params.yaw_flip {
        let alt = e.corners.frobenius_distance(&c.corners.heading_flipped());
        if alt < direct {
            (alt, true)
        } else {
            (direct, false)
        }
    } else {
        (direct, false)
    };
    let d = center + params.beta * corner;
    (d <= bound).then_some((d, flipped))
}

/// Scene consistency of one alignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScore {
    /// Number of one-to-one box pairs within `τ` (`C̄`).
    pub confidence: f64,
    /// Mean box distance over those pairs (`D̄`); infinite when there are none.
    pub mean_distance: f64,
    /// (ego index, coop index, distance), in admission order.
    pub valid_pairs: Vec<(usize, usize, f64)>,
}

impl PairScore {
    fn from_pairs(valid_pairs: Vec<(usize, usize, f64)>) -> Self {
        let n = valid_pairs.len();
        let mean_distance = if n == 0 {
            f64::INFINITY
        } else {
            valid_pairs.iter().map(|p| p.2).sum::<f64>() / n as f64
        };
        Self {
            confidence: n as f64,
            mean_distance,
            valid_pairs,
        }
    }

    /// Larger count wins, then smaller mean distance.
    fn better_than(&self, other: &PairScore) -> bool {
        match self.confidence.total_cmp(&other.confidence) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => self.mean_distance < other.mean_distance,
        }
    }
}

/// Greedy one-to-one pairing by ascending distance (ties by index), admitting
/// pairs with distance ≤ τ.
fn pair_up(ego: &[Placed], coop: &[Placed], params: &ODistParams) -> PairScore {
    let mut candidates = Vec::new();
    for (i, e) in ego.iter().enumerate() {
        for (j, c) in coop.iter().enumerate() {
            if let Some((d, _)) = placed_distance(e, c, params, params.tau) {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut ego_taken = vec![false; ego.len()];
    let mut coop_taken = vec![false; coop.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in candidates {
        if !ego_taken[i] && !coop_taken[j] {
            ego_taken[i] = true;
            coop_taken[j] = true;
            pairs.push((i, j, d));
        }
    }
    PairScore::from_pairs(pairs)
}

fn place_all(scene: &Scene) -> Vec<Placed> {
    scene.boxes.iter().map(Placed::of).collect()
}

fn place_transformed(scene: &Scene, t: &RigidTransform) -> Vec<Placed> {
    scene
        .boxes
        .iter()
        .map(|b| Placed::of(&t.transform_box(b)))
        .collect()
}

/// Scores a given alignment `t` (coop → ego) without any hypothesis search.
pub fn score_alignment(
    ego: &Scene,
    coop: &Scene,
    t: &RigidTransform,
    params: &ODistParams,
) -> PairScore {
    pair_up(&place_all(ego), &place_transformed(coop, t), params)
}

/// oDist of a candidate pair together with the hypothesis that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisScore {
    pub score: PairScore,
    pub hypothesis: RigidTransform,
    /// The hypothesis was built with the coop box's heading flipped by π.
    pub seed_flipped: bool,
}

fn odist_placed(
    ego_placed: &[Placed],
    ego: &Scene,
    coop: &Scene,
    i: usize,
    j: usize,
    params: &ODistParams,
) -> Result<HypothesisScore> {
    let e = ego.get(i)?;
    let c = coop.get(j)?;
    let evaluate = |seed: &DetectionBox| -> Result<(PairScore, RigidTransform)> {
        let f = pair_hypothesis(e, seed)?;
        let placed = place_transformed(coop, &f);
        Ok((pair_up(ego_placed, &placed, params), f))
    };
    let (score, hypothesis) = evaluate(c)?;
    let mut best = HypothesisScore {
        score,
        hypothesis,
        seed_flipped: false,
    };
    if params.yaw_flip {
        let (score, hypothesis) = evaluate(&c.flipped())?;
        if score.better_than(&best.score) {
            best = HypothesisScore {
                score,
                hypothesis,
                seed_flipped: true,
            };
        }
    }
    Ok(best)
}

/// oDist of candidate pair (i, j): hypothesis from the pair, whole coop scene
/// carried into the ego frame, one-to-one pairing within `τ`.
pub fn odist(
    ego: &Scene,
    coop: &Scene,
    i: usize,
    j: usize,
    params: &ODistParams,
) -> Result<HypothesisScore> {
    odist_placed(&place_all(ego), ego, coop, i, j, params)
}

/// Dense n×m matrix of non-negative, finite affinities.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl AffinityMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidConfig(
                "affinity rows differ in length".into(),
            ));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "affinities must be finite and non-negative, got {v}"
            )));
        }
        Ok(Self {
            rows: n,
            cols: m,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

/// A matched (ego, coop) pair with its affinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub ego_index: usize,
    pub coop_index: usize,
    pub confidence: f64,
    /// Corners of the coop box must be relabelled as if its heading were
    /// turned by π to correspond row-wise with the ego box.
    #[serde(default)]
    pub coop_flipped: bool,
}

impl Match {
    pub fn new(ego_index: usize, coop_index: usize, confidence: f64) -> Self {
        Self {
            ego_index,
            coop_index,
            confidence,
            coop_flipped: false,
        }
    }
}

/// One-to-one co-visible object pairs, ordered by ego index.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchSet {
    matches: Vec<Match>,
}

impl MatchSet {
    pub fn from_matches(matches: Vec<Match>) -> Self {
        Self { matches }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Match> {
        self.matches.iter()
    }

    pub fn as_slice(&self) -> &[Match] {
        &self.matches
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn total_confidence(&self) -> f64 {
        self.matches.iter().map(|m| m.confidence).sum()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.matches
            .iter()
            .map(|m| (m.ego_index, m.coop_index))
            .collect()
    }
}

impl<'a> IntoIterator for &'a MatchSet {
    type Item = &'a Match;
    type IntoIter = std::slice::Iter<'a, Match>;

    fn into_iter(self) -> Self::IntoIter {
        self.matches.iter()
    }
}

/// Affinity matrix together with every candidate's score.
#[derive(Debug, Clone)]
pub struct AffinityAnalysis {
    pub matrix: AffinityMatrix,
    /// Row-major; `None` where the pair hypothesis was degenerate.
    pub scores: Vec<Option<HypothesisScore>>,
}

impl AffinityAnalysis {
    pub fn score(&self, i: usize, j: usize) -> Option<&HypothesisScore> {
        let (_, m) = self.matrix.shape();
        self.scores[i * m + j].as_ref()
    }
}

pub fn analyze_affinity(ego: &Scene, coop: &Scene, params: &ODistParams) -> AffinityAnalysis {
    let n = ego.len();
    let m = coop.len();
    let ego_placed = place_all(ego);
    let scores: Vec<Option<HypothesisScore>> = (0..n * m)
        .into_par_iter()
        .map(|k| odist_placed(&ego_placed, ego, coop, k / m, k % m, params).ok())
        .collect();
    let data = scores
        .iter()
        .map(|s| match s {
            Some(h) if h.score.mean_distance < params.tau1 => h.score.confidence,
            _ => 0.0,
        })
        .collect();
    AffinityAnalysis {
        matrix: AffinityMatrix {
            rows: n,
            cols: m,
            data,
        },
        scores,
    }
}

/// `M[i][j] = C̄` when `D̄ < τ₁`, else 0. Degenerate pairs score 0.
pub fn build_affinity(ego: &Scene, coop: &Scene, params: &ODistParams) -> AffinityMatrix {
    analyze_affinity(ego, coop, params).matrix
}

/// Association output: the matches plus the hypothesis of the strongest one.
#[derive(Debug, Clone)]
pub struct Association {
    pub matches: MatchSet,
    pub affinity: AffinityMatrix,
    /// Hypothesis of the highest-affinity match (ties: smaller `D̄`, then
    /// lower ego index); used to resolve heading flips of the other matches.
    pub reference: RigidTransform,
}

/// Full association: affinity, assignment, and per-match heading resolution.
pub fn associate_detailed(ego: &Scene, coop: &Scene, params: &ODistParams) -> Result<Association> {
    let analysis = analyze_affinity(ego, coop, params);
    let raw = solve_assignment(&analysis.matrix);
    let reference = raw
        .iter()
        .filter_map(|m| analysis.score(m.ego_index, m.coop_index).map(|s| (m, s)))
        .min_by(|(ma, sa), (mb, sb)| {
            mb.confidence
                .total_cmp(&ma.confidence)
                .then(sa.score.mean_distance.total_cmp(&sb.score.mean_distance))
                .then(ma.ego_index.cmp(&mb.ego_index))
        })
        .map(|(_, s)| s.hypothesis)
        .ok_or(Error::NoCoVisibleObjects)?;

    let matches = raw
        .iter()
        .map(|m| {
            let mut out = *m;
            if params.yaw_flip {
                let e = ego.boxes[m.ego_index].corners();
                let c = reference.apply_corners(&coop.boxes[m.coop_index].corners());
                out.coop_flipped =
                    e.frobenius_distance(&c.heading_flipped()) < e.frobenius_distance(&c);
            }
            out
        })
        .collect();
    Ok(Association {
        matches: MatchSet::from_matches(matches),
        affinity: analysis.matrix,
        reference,
    })
}

/// Co-visible pairs between the two scenes, each carrying its affinity.
pub fn associate(ego: &Scene, coop: &Scene, params: &ODistParams) -> Result<MatchSet> {
    associate_detailed(ego, coop, params).map(|a| a.matches)
}

/// How many boxes to keep per scene before association.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TopK {
    #[default]
    All,
    Largest(usize),
}

impl TopK {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "∞" | "all" => Ok(TopK::All),
            other => match other.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(TopK::Largest(k)),
                _ => Err(Error::InvalidConfig(format!(
                    "top_k must be a positive integer or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

impl std::fmt::Display for TopK {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TopK::All => f.write_str("inf"),
            TopK::Largest(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for TopK {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TopK::All => s.serialize_str("inf"),
            TopK::Largest(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for TopK {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("top_k must be at least 1")),
            Raw::Count(k) => Ok(TopK::Largest(k as usize)),
            Raw::Text(s) => TopK::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

/// Indices of the boxes kept by [`top_k_by_volume`], ascending.
pub fn top_k_indices(scene: &Scene, k: TopK) -> Vec<usize> {
    let n = scene.len();
    let TopK::Largest(k) = k else {
        return (0..n).collect();
    };
    if n <= k {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scene.boxes[b]
            .volume()
            .total_cmp(&scene.boxes[a].volume())
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

/// The `k` largest-volume boxes, in their original relative order.
pub fn top_k_by_volume(scene: &Scene, k: TopK) -> Scene {
    Scene {
        agent_id: scene.agent_id.clone(),
        frame_id: scene.frame_id,
        boxes: top_k_indices(scene, k)
            .into_iter()
            .map(|i| scene.boxes[i].clone())
            .collect(),
    }
}
