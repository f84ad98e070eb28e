//! Calibration error metrics and their threshold-filtered summaries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{rotation_angle, Mat3, RigidTransform, Vec3};

/// Geodesic angle between two rotations, in degrees.
pub fn rre(r_true: &Mat3, r_est: &Mat3) -> f64 {
    rotation_angle(r_true, r_est).to_degrees()
}

/// Euclidean distance between two translations, meters.
pub fn rte(t_true: &Vec3, t_est: &Vec3) -> f64 {
    (t_true - t_est).norm()
}

/// Outcome of one calibration trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialError {
    /// Degrees.
    pub rre: f64,
    /// Meters.
    pub rte: f64,
    /// The solver produced a transform at all.
    pub succeeded_solver: bool,
}

impl TrialError {
    pub fn from_transforms(truth: &RigidTransform, estimate: &RigidTransform) -> Self {
        Self {
            rre: rre(truth.rotation(), estimate.rotation()),
            rte: rte(truth.translation(), estimate.translation()),
            succeeded_solver: true,
        }
    }

    /// A trial where the solver produced no transform.
    pub fn solver_failure() -> Self {
        Self {
            rre: 180.0,
            rte: f64::INFINITY,
            succeeded_solver: false,
        }
    }

    fn is_valid(&self, lambda: f64) -> bool {
        self.succeeded_solver && self.rte < lambda
    }
}

/// Success rate and filtered means at one RTE threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub lambda: f64,
    pub success_rate: f64,
    /// Mean RRE over successful trials; `None` when there are none.
    pub mrre: Option<f64>,
    /// Mean RTE over successful trials; `None` when there are none.
    pub mrte: Option<f64>,
    pub n_total: usize,
    pub n_valid: usize,
}

/// A trial succeeds when the solver returned a transform with `rte < λ`.
/// Solver failures count toward the total but never toward the means.
pub fn summarize(trials: &[TrialError], lambda: f64) -> Result<MetricSummary> {
    if trials.is_empty() {
        return Err(Error::EmptyTrialSet);
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let valid: Vec<&TrialError> = trials.iter().filter(|t| t.is_valid(lambda)).collect();
    let n_valid = valid.len();
    let mean = |f: fn(&TrialError) -> f64| -> Option<f64> {
        (n_valid > 0).then(|| valid.iter().map(|t| f(t)).sum::<f64>() / n_valid as f64)
    };
    Ok(MetricSummary {
        lambda,
        success_rate: n_valid as f64 / trials.len() as f64,
        mrre: mean(|t| t.rre),
        mrte: mean(|t| t.rte),
        n_total: trials.len(),
        n_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw_rotation;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn trial(rte: f64) -> TrialError {
        TrialError {
            rre: 0.5,
            rte,
            succeeded_solver: true,
        }
    }

    #[test]
    fn rre_examples() {
        let r = yaw_rotation(0.8);
        assert_abs_diff_eq!(rre(&r, &r), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(
            rre(&r, &(r * yaw_rotation(10f64.to_radians()))),
            10.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            rre(&r, &(r * yaw_rotation(std::f64::consts::PI))),
            180.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn rte_examples() {
        let z = Vec3::zeros();
        assert_eq!(rte(&z, &z), 0.0);
        assert_eq!(rte(&z, &Vec3::new(3.0, 4.0, 0.0)), 5.0);
        assert_eq!(rte(&Vec3::repeat(1.0), &Vec3::new(1.0, 1.0, 2.0)), 1.0);
    }

    #[test]
    fn hand_countable_summary() {
        let s = summarize(&[trial(0.5), trial(1.5), trial(2.5)], 2.0).unwrap();
        assert_eq!(s.success_rate, 2.0 / 3.0);
        assert_eq!(s.mrte, Some(1.0));
        assert_eq!(s.mrre, Some(0.5));
        assert_eq!((s.n_total, s.n_valid), (3, 2));
    }

    #[test]
    fn all_failures() {
        let s = summarize(&[TrialError::solver_failure(); 4], 1.0).unwrap();
        assert_eq!(s.success_rate, 0.0);
        assert_eq!(s.mrre, None);
        assert_eq!(s.mrte, None);
    }

    #[test]
    fn threshold_is_strict() {
        let s = summarize(&[trial(2.0), trial(1.0)], 2.0).unwrap();
        assert_eq!(s.n_valid, 1);
        assert_eq!(s.mrte, Some(1.0));
    }

    #[test]
    fn failures_count_in_denominator() {
        let s = summarize(&[trial(0.2), TrialError::solver_failure()], 1.0).unwrap();
        assert_eq!(s.success_rate, 0.5);
        assert_eq!(s.mrte, Some(0.2));
    }

    #[test]
    fn empty_and_bad_lambda() {
        assert_eq!(summarize(&[], 1.0), Err(Error::EmptyTrialSet));
        assert!(summarize(&[trial(0.1)], 0.0).is_err());
    }

    fn arb_rotation() -> impl Strategy<Value = Mat3> {
        (-3.0..3.0f64, -1.5..1.5f64, -3.0..3.0f64)
            .prop_map(|(r, p, y)| nalgebra::Rotation3::from_euler_angles(r, p, y).into_inner())
    }

    proptest! {
        #[test]
        fn success_rate_monotone_in_lambda(
            rtes in prop::collection::vec(0.0..5.0f64, 1..40),
            l1 in 0.01..5.0f64,
            dl in 0.0..3.0f64,
        ) {
            let trials: Vec<_> = rtes.iter().map(|r| trial(*r)).collect();
            let a = summarize(&trials, l1).unwrap();
            let b = summarize(&trials, l1 + dl).unwrap();
            prop_assert!(a.success_rate <= b.success_rate);
            if let Some(m) = a.mrte {
                prop_assert!(m < l1);
            }
        }

        #[test]
        fn rre_symmetric_and_bi_invariant(a in arb_rotation(), b in arb_rotation(), g in arb_rotation()) {
            prop_assert!((rre(&a, &b) - rre(&b, &a)).abs() < 1e-12);
            prop_assert!((rre(&(g * a), &(g * b)) - rre(&a, &b)).abs() < 1e-9);
            let v = rre(&a, &b);
            prop_assert!((0.0..=180.0).contains(&v));
        }
    }
}
