//! Closed-form rigid alignment.
//!
//! Both solvers share one SVD step: given a cross-covariance
//! `H = Σ wᵢ (eᵢ − ē)(cᵢ − c̄)ᵀ` with SVD `UΣVᵀ`, the rotation taking the
//! cooperative points onto the ego points is `U·diag(1, 1, det(UVᵀ))·Vᵀ`.
//!
//! [`pair_hypothesis`] applies it to the corners of a single box pair, each
//! centered on its own box center, and translates center onto center.
//! [`weighted_kabsch`] applies it to the stacked corners of every matched
//! pair, weighted by match confidence.

use nalgebra::SVD;

use crate::association::MatchSet;
use crate::error::{Error, Result};
use crate::geometry::{DetectionBox, Mat3, RigidTransform, Scene, Vec3};

/// Below this σ₂/σ₁ ratio the cross-covariance is treated as rank < 2.
pub const RANK_RATIO_THRESHOLD: f64 = 1e-8;

/// Reflection-corrected Kabsch rotation from a cross-covariance. Returns the
/// σ₂/σ₁ ratio as the error when `h` is rank deficient.
fn kabsch_rotation(h: &Mat3) -> std::result::Result<Mat3, f64> {
    let svd = SVD::new(*h, true, true);
    let s = svd.singular_values;
    // `SVD::new` sorts singular values in descending order.
    let ratio = if s[0] > 0.0 && s[0].is_finite() {
        s[1] / s[0]
    } else {
        0.0
    };
    if !(ratio >= RANK_RATIO_THRESHOLD) {
        return Err(ratio);
    }
    let u = svd.u.expect("U requested");
    let v_t = svd.v_t.expect("Vᵀ requested");
    let d = (u * v_t).determinant().signum();
    Ok(u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t)
}

/// Transformation hypothesis that would hold if `coop_box` were the same
/// object as `ego_box`: rotation from the centered corner sets, translation
/// carrying the coop center onto the ego center.
pub fn pair_hypothesis(ego_box: &DetectionBox, coop_box: &DetectionBox) -> Result<RigidTransform> {
    let ce = ego_box.corners();
    let cc = coop_box.corners();
    let pe = ego_box.center();
    let pc = coop_box.center();
    let mut h = Mat3::zeros();
    for (e, c) in ce.rows().iter().zip(cc.rows()) {
        h += (e - pe) * (c - pc).transpose();
    }
    let r = kabsch_rotation(&h).map_err(|ratio| Error::DegenerateCorners { ratio })?;
    Ok(RigidTransform::from_parts(r, pe - r * pc))
}

/// Paired point sets with non-negative weights. `source` lives in the
/// cooperative frame, `target` in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCorrespondences {
    source: Vec<Vec3>,
    target: Vec<Vec3>,
    weights: Vec<f64>,
}

impl WeightedCorrespondences {
    pub fn new(source: Vec<Vec3>, target: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if source.len() != target.len() || source.len() != weights.len() {
            return Err(Error::InvalidCorrespondences(format!(
                "length mismatch: {} source, {} target, {} weights",
                source.len(),
                target.len(),
                weights.len()
            )));
        }
        if source.len() < 3 {
            return Err(Error::InvalidCorrespondences(format!(
                "need at least 3 correspondences, got {}",
                source.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidCorrespondences(format!(
                "weights must be finite and non-negative, got {w}"
            )));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::InvalidCorrespondences(
                "at least one weight must be positive".into(),
            ));
        }
        if !source
            .iter()
            .chain(&target)
            .all(|p| p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidCorrespondences(
                "points must be finite".into(),
            ));
        }
        Ok(Self {
            source,
            target,
            weights,
        })
    }

    /// All weights 1.
    pub fn uniform(source: Vec<Vec3>, target: Vec<Vec3>) -> Result<Self> {
        let n = source.len();
        Self::new(source, target, vec![1.0; n])
    }

    pub fn source(&self) -> &[Vec3] {
        &self.source
    }

    pub fn target(&self) -> &[Vec3] {
        &self.target
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    /// sqrt(Σ wᵢ‖R·cᵢ + t − eᵢ‖² / Σ wᵢ), meters.
    pub rms_residual: f64,
}

/// Weighted least-squares rigid alignment of `source` onto `target`.
pub fn weighted_kabsch(corr: &WeightedCorrespondences) -> Result<RegistrationResult> {
    let effective = corr.weights.iter().filter(|w| **w > 0.0).count();
    if effective < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{effective} positively weighted points, need at least 3"
        )));
    }
    let total: f64 = corr.weights.iter().sum();
    let weighted_mean = |pts: &[Vec3]| -> Vec3 {
        pts.iter()
            .zip(&corr.weights)
            .map(|(p, w)| p * *w)
            .sum::<Vec3>()
            / total
    };
    let mean_src = weighted_mean(&corr.source);
    let mean_dst = weighted_mean(&corr.target);

    let mut h = Mat3::zeros();
    for ((c, e), w) in corr.source.iter().zip(&corr.target).zip(&corr.weights) {
        h += (e - mean_dst) * (c - mean_src).transpose() * *w;
    }
    let r = kabsch_rotation(&h).map_err(|ratio| {
        Error::DegenerateGeometry(format!("cross-covariance rank < 2 (σ₂/σ₁ = {ratio:.3e})"))
    })?;
    let transform = RigidTransform::from_parts(r, mean_dst - r * mean_src);

    let sq: f64 = corr
        .source
        .iter()
        .zip(&corr.target)
        .zip(&corr.weights)
        .map(|((c, e), w)| w * (transform.apply(c) - e).norm_squared())
        .sum();
    Ok(RegistrationResult {
        transform,
        rms_residual: (sq / total).sqrt(),
    })
}

/// Stacks the canonical corners of every matched pair. Each of a match's
/// eight point pairs carries that match's confidence as its weight. When a
/// match was made with the coop heading flipped by π, the flipped corner
/// labelling is used so that rows correspond.
pub fn build_feature_clouds(
    matches: &MatchSet,
    ego: &Scene,
    coop: &Scene,
) -> Result<WeightedCorrespondences> {
    if matches.is_empty() {
        return Err(Error::EmptyMatchSet);
    }
    let n = matches.len() * 8;
    let mut source = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for m in matches.iter() {
        let e = ego.get(m.ego_index)?;
        let c = coop.get(m.coop_index)?;
        let c_corners = if m.coop_flipped {
            c.flipped().corners()
        } else {
            c.corners()
        };
        target.extend_from_slice(e.corners().rows());
        source.extend_from_slice(c_corners.rows());
        weights.extend(std::iter::repeat(m.confidence).take(8));
    }
    WeightedCorrespondences::new(source, target, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::Match;
    use crate::geometry::yaw_rotation;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn bx(c: [f64; 3], d: [f64; 3], yaw: f64) -> DetectionBox {
        DetectionBox::ground_truth(Vec3::from(c), Vec3::from(d), yaw).unwrap()
    }

    #[test]
    fn identical_boxes_give_identity() {
        let b = bx([3.0, 4.0, 0.5], [4.5, 1.9, 1.6], 0.8);
        let t = pair_hypothesis(&b, &b).unwrap();
        assert_abs_diff_eq!(*t.rotation(), Mat3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(*t.translation(), Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn translated_box_gives_translation() {
        let coop = bx([3.0, 4.0, 0.5], [4.5, 1.9, 1.6], 0.8);
        let ego = bx([8.0, 4.0, 0.5], [4.5, 1.9, 1.6], 0.8);
        let t = pair_hypothesis(&ego, &coop).unwrap();
        assert_abs_diff_eq!(*t.rotation(), Mat3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(*t.translation(), Vec3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn rotated_box_maps_corners_exactly() {
        let ego = bx([2.0, -1.0, 0.7], [4.0, 2.0, 1.5], 0.3);
        let coop = bx([2.0, -1.0, 0.7], [4.0, 2.0, 1.5], 0.3 + FRAC_PI_2);
        let f = pair_hypothesis(&ego, &coop).unwrap();
        assert_abs_diff_eq!(*f.rotation(), yaw_rotation(-FRAC_PI_2), epsilon = 1e-12);
        let mapped = f.apply_corners(&coop.corners());
        for (p, q) in mapped.rows().iter().zip(ego.corners().rows()) {
            assert!((p - q).norm() < 1e-9, "{p} vs {q}");
        }
    }

    #[test]
    fn hypothesis_is_proper_rotation_for_mismatched_dims() {
        let ego = bx([0.0; 3], [4.0, 2.0, 1.5], 1.0);
        let coop = bx([5.0, 1.0, 0.0], [0.6, 0.6, 1.8], 2.5);
        let f = pair_hypothesis(&ego, &coop).unwrap();
        assert_abs_diff_eq!(f.rotation().determinant(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.apply(coop.center()), *ego.center(), epsilon = 1e-12);
    }

    fn cloud() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(4.0, 0.5, 0.2),
            Vec3::new(-1.0, 3.0, 1.0),
            Vec3::new(2.0, -2.5, 0.4),
            Vec3::new(7.0, 1.0, -0.3),
        ]
    }

    #[test]
    fn identical_sets_give_identity() {
        let c = WeightedCorrespondences::uniform(cloud(), cloud()).unwrap();
        let r = weighted_kabsch(&c).unwrap();
        assert_abs_diff_eq!(*r.transform.rotation(), Mat3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(*r.transform.translation(), Vec3::zeros(), epsilon = 1e-12);
        assert!(r.rms_residual < 1e-12);
    }

    #[test]
    fn recovers_known_transform_with_weights() {
        let truth = RigidTransform::from_yaw(2.1, Vec3::new(12.0, -3.0, 0.4));
        let src = cloud();
        let dst = truth.apply_all(&src);
        let c = WeightedCorrespondences::new(src, dst, vec![1.0, 3.0, 0.5, 2.0, 9.0]).unwrap();
        let r = weighted_kabsch(&c).unwrap();
        let (rot_err, t_err) = r.transform.distance_to(&truth);
        assert!(rot_err < 1e-9 && t_err < 1e-9);
        assert!(r.rms_residual < 1e-9);
    }

    #[test]
    fn weight_scale_invariance() {
        let truth = RigidTransform::from_yaw(-0.4, Vec3::new(1.0, 2.0, 3.0));
        let src = cloud();
        let mut dst = truth.apply_all(&src);
        dst[2].x += 0.3;
        dst[4].y -= 0.2;
        let ones = WeightedCorrespondences::uniform(src.clone(), dst.clone()).unwrap();
        let sevens = WeightedCorrespondences::new(src, dst, vec![7.0; 5]).unwrap();
        let a = weighted_kabsch(&ones).unwrap().transform;
        let b = weighted_kabsch(&sevens).unwrap().transform;
        assert_abs_diff_eq!(*a.rotation(), *b.rotation(), epsilon = 1e-12);
        assert_abs_diff_eq!(*a.translation(), *b.translation(), epsilon = 1e-12);
    }

    #[test]
    fn zero_weights_do_not_count() {
        let src = cloud();
        let dst = src.clone();
        let c = WeightedCorrespondences::new(src, dst, vec![1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            weighted_kabsch(&c),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let src: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let c = WeightedCorrespondences::uniform(src.clone(), src).unwrap();
        assert!(matches!(
            weighted_kabsch(&c),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn correspondence_validation() {
        let p = cloud();
        assert!(WeightedCorrespondences::uniform(p[..2].to_vec(), p[..2].to_vec()).is_err());
        assert!(WeightedCorrespondences::uniform(p.clone(), p[..4].to_vec()).is_err());
        assert!(WeightedCorrespondences::new(p.clone(), p.clone(), vec![0.0; 5]).is_err());
        assert!(
            WeightedCorrespondences::new(p.clone(), p.clone(), vec![1.0, -1.0, 1.0, 1.0, 1.0])
                .is_err()
        );
        assert!(
            WeightedCorrespondences::new(p.clone(), p, vec![1.0, f64::NAN, 1.0, 1.0, 1.0]).is_err()
        );
    }

    fn two_box_scene() -> Scene {
        Scene::new(
            "a",
            0,
            vec![
                bx([0.0, 0.0, 0.5], [4.0, 2.0, 1.5], 0.2),
                bx([10.0, 3.0, 0.8], [5.0, 2.2, 2.0], 1.7),
            ],
        )
    }

    #[test]
    fn feature_cloud_layout() {
        let s = two_box_scene();
        let one = MatchSet::from_matches(vec![Match::new(1, 1, 3.0)]);
        let c = build_feature_clouds(&one, &s, &s).unwrap();
        assert_eq!(c.len(), 8);
        assert!(c.weights().iter().all(|w| *w == 3.0));

        let two = MatchSet::from_matches(vec![Match::new(0, 0, 2.0), Match::new(1, 1, 2.0)]);
        let c = build_feature_clouds(&two, &s, &s).unwrap();
        assert_eq!(c.len(), 16);
        assert_eq!(&c.target()[..8], s.boxes[0].corners().rows());
        assert_eq!(&c.target()[8..], s.boxes[1].corners().rows());

        let r = weighted_kabsch(&c).unwrap();
        assert_abs_diff_eq!(*r.transform.rotation(), Mat3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(*r.transform.translation(), Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn feature_cloud_errors() {
        let s = two_box_scene();
        assert_eq!(
            build_feature_clouds(&MatchSet::default(), &s, &s),
            Err(Error::EmptyMatchSet)
        );
        let bad = MatchSet::from_matches(vec![Match::new(5, 0, 1.0)]);
        assert!(matches!(
            build_feature_clouds(&bad, &s, &s),
            Err(Error::IndexOutOfRange { .. })
        ));
    }
}
