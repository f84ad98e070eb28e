//! Oriented detection boxes, canonical corner extraction and SE(3) algebra.
//!
//! Boxes are yaw-only (gravity-aligned). A box's eight corners are always
//! emitted in the same sign order in the box's local frame, so two congruent
//! boxes related by a rigid motion have row-wise corresponding corners.

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on ‖RᵀR − I‖_F and |det R − 1| for a valid rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Sign triples applied to (l/2, w/2, h/2), in canonical corner order.
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -1.0],
    [1.0, -1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, 1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, -1.0, -1.0],
];

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if y >= TAU {
        0.0
    } else {
        y
    }
}

/// Signed smallest difference `a − b` wrapped into `(−π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Rotation about +z by `yaw` radians.
pub fn yaw_rotation(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// A 7-DoF gravity-aligned detection box with detector confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionBox {
    center: Vec3,
    dims: Vec3,
    yaw: f64,
    confidence: f64,
    class_label: Option<String>,
}

impl DetectionBox {
    /// `dims` are full extents (length, width, height). The yaw is wrapped
    /// into `[0, 2π)`.
    pub fn new(center: Vec3, dims: Vec3, yaw: f64, confidence: f64) -> Result<Self> {
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox {
                field: "center",
                reason: "must be finite".into(),
            });
        }
        if !dims.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidBox {
                field: "dims",
                reason: format!(
                    "must be finite and strictly positive, got {:?}",
                    dims.as_slice()
                ),
            });
        }
        if !yaw.is_finite() {
            return Err(Error::InvalidBox {
                field: "yaw",
                reason: "must be finite".into(),
            });
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidBox {
                field: "confidence",
                reason: format!("must lie in [0, 1], got {confidence}"),
            });
        }
        Ok(Self {
            center,
            dims,
            yaw: normalize_yaw(yaw),
            confidence,
            class_label: None,
        })
    }

    /// Ground-truth style box with confidence 1.
    pub fn ground_truth(center: Vec3, dims: Vec3, yaw: f64) -> Result<Self> {
        Self::new(center, dims, yaw, 1.0)
    }

    pub fn with_class(mut self, label: impl Into<String>) -> Self {
        self.class_label = Some(label.into());
        self
    }

    pub fn center(&self) -> &Vec3 {
        &self.center
    }

    pub fn dims(&self) -> &Vec3 {
        &self.dims
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn class_label(&self) -> Option<&str> {
        self.class_label.as_deref()
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    /// Same box with its heading turned by π. The corner set is identical;
    /// only the canonical labelling of the corners changes.
    pub fn flipped(&self) -> Self {
        self.with_pose(self.center, self.yaw + PI)
    }

    pub(crate) fn with_pose(&self, center: Vec3, yaw: f64) -> Self {
        Self {
            center,
            dims: self.dims,
            yaw: normalize_yaw(yaw),
            confidence: self.confidence,
            class_label: self.class_label.clone(),
        }
    }

    /// The eight corners in canonical order:
    /// `center + Rz(yaw) · (s_k ⊙ dims / 2)`.
    pub fn corners(&self) -> CornerMatrix {
        let rot = yaw_rotation(self.yaw);
        let half = self.dims * 0.5;
        let mut rows = [Vec3::zeros(); 8];
        for (row, s) in rows.iter_mut().zip(CORNER_SIGNS.iter()) {
            let local = Vec3::new(s[0] * half.x, s[1] * half.y, s[2] * half.z);
            *row = self.center + rot * local;
        }
        CornerMatrix(rows)
    }
}

/// Free-function form of [`DetectionBox::corners`].
pub fn corners_of(b: &DetectionBox) -> CornerMatrix {
    b.corners()
}

/// Eight box vertices, one row per corner, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerMatrix(pub [Vec3; 8]);

impl CornerMatrix {
    pub fn rows(&self) -> &[Vec3; 8] {
        &self.0
    }

    pub fn centroid(&self) -> Vec3 {
        self.0.iter().sum::<Vec3>() / 8.0
    }

    /// Corner labelling of the same box with its heading turned by π:
    /// sign triple (a, b, c) becomes (−a, −b, c), i.e. row k ↦ row k ⊕ 6.
    pub fn heading_flipped(&self) -> CornerMatrix {
        CornerMatrix(std::array::from_fn(|k| self.0[k ^ 6]))
    }

    /// Frobenius norm of the 8×3 row-wise difference.
    pub fn frobenius_distance(&self, other: &CornerMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// A rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl RigidTransform {
    /// Validates that `rotation` is in SO(3) within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOLERANCE)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("translation must be finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Accepts a rotation within `tolerance` of SO(3) and projects it onto
    /// the nearest proper rotation.
    pub fn new_projected(rotation: Mat3, translation: Vec3, tolerance: f64) -> Result<Self> {
        check_rotation(&rotation, tolerance)?;
        Self::new(nearest_rotation(&rotation), translation)
    }

    /// For rotations produced by the SVD solvers, which are orthonormal to
    /// machine precision by construction.
    pub(crate) fn from_parts(rotation: Mat3, translation: Vec3) -> Self {
        debug_assert!(check_rotation(&rotation, 1e-9).is_ok());
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        Self {
            rotation: yaw_rotation(yaw),
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Heading component of the rotation, `atan2(R₁₀, R₀₀)`.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    pub fn apply_corners(&self, c: &CornerMatrix) -> CornerMatrix {
        CornerMatrix(c.0.map(|p| self.apply(&p)))
    }

    /// `self ∘ other`: maps `p` to `self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Maps a box into the target frame. The center follows the full
    /// transform; the yaw is that of the yaw-only box whose canonical corners
    /// are closest (row-wise, least squares) to the transformed corners. For a
    /// pure-yaw rotation this is exact: `corners(T·b) = T·corners(b)`.
    pub fn transform_box(&self, b: &DetectionBox) -> DetectionBox {
        let center = self.apply(b.center());
        // Minimise Σ‖Rz(ψ)q_k − G q_k‖² with G = R·Rz(θ) and q_k the local
        // corner offsets. Σ q_k q_kᵀ ∝ diag(l², w², h²) =: D, so the optimum
        // maximises tr(Rz(ψ)ᵀ G D), giving ψ = atan2(A₁₀ − A₀₁, A₀₀ + A₁₁).
        let d = b.dims();
        let g = self.rotation * yaw_rotation(b.yaw());
        let a = g * Mat3::from_diagonal(&Vec3::new(d.x * d.x, d.y * d.y, d.z * d.z));
        let yaw = (a[(1, 0)] - a[(0, 1)]).atan2(a[(0, 0)] + a[(1, 1)]);
        b.with_pose(center, yaw)
    }

    /// Rotation and translation distance to another transform, as
    /// (angle in radians, Euclidean distance).
    pub fn distance_to(&self, other: &RigidTransform) -> (f64, f64) {
        (
            rotation_angle(&self.rotation, &other.rotation),
            (self.translation - other.translation).norm(),
        )
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "yaw {:.6} rad, t = ({:.6}, {:.6}, {:.6})",
            self.yaw(),
            self.translation.x,
            self.translation.y,
            self.translation.z
        )
    }
}

fn check_rotation(r: &Mat3, tol: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidTransform("rotation must be finite".into()));
    }
    let ortho = (r.transpose() * r - Mat3::identity()).norm();
    if ortho >= tol {
        return Err(Error::InvalidTransform(format!(
            "rotation is not orthonormal (‖RᵀR − I‖ = {ortho:.3e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() >= tol {
        return Err(Error::InvalidTransform(format!(
            "rotation determinant is {det}, expected +1"
        )));
    }
    Ok(())
}

/// Closest proper rotation in Frobenius norm (SVD projection).
/// Geodesic angle between two rotations, radians in `[0, π]`.
///
/// Uses `atan2(sin, cos)` of the relative rotation, which stays accurate near
/// 0 and π where `acos` of the trace loses half the digits.
pub fn rotation_angle(a: &Mat3, b: &Mat3) -> f64 {
    let m = a.transpose() * b;
    let s = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
    .norm();
    s.atan2(m.trace() - 1.0)
}

pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("U requested");
    let v_t = svd.v_t.expect("Vᵀ requested");
    let d = (u * v_t).determinant().signum();
    u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
}

/// Serialized form: row-major rotation and translation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct TransformRepr {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(repr: TransformRepr) -> Result<Self> {
        RigidTransform::new(
            Mat3::from_row_slice(&repr.rotation),
            Vec3::from(repr.translation),
        )
    }
}

/// The boxes one agent reports for one frame. Indices are stable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub agent_id: String,
    pub frame_id: u64,
    pub boxes: Vec<DetectionBox>,
}

impl Scene {
    pub fn new(agent_id: impl Into<String>, frame_id: u64, boxes: Vec<DetectionBox>) -> Self {
        Self {
            agent_id: agent_id.into(),
            frame_id,
            boxes,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<&DetectionBox> {
        self.boxes.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.boxes.len(),
        })
    }

    /// Every box mapped through `t`.
    pub fn transformed(&self, t: &RigidTransform) -> Scene {
        Scene {
            agent_id: self.agent_id.clone(),
            frame_id: self.frame_id,
            boxes: self.boxes.iter().map(|b| t.transform_box(b)).collect(),
        }
    }
}
