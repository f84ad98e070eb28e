use thiserror::Error;

/// Errors raised by the calibration pipeline and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid detection box: {field} {reason}")]
    InvalidBox { field: &'static str, reason: String },

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid correspondences: {0}")]
    InvalidCorrespondences(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The centered corner cross-covariance of a box pair is rank deficient.
    #[error("degenerate box corners (singular value ratio {ratio:.3e})")]
    DegenerateCorners { ratio: f64 },

    /// Weighted registration has too few effective points or a rank-deficient
    /// cross-covariance.
    #[error("degenerate registration geometry: {0}")]
    DegenerateGeometry(String),

    #[error("match set is empty")]
    EmptyMatchSet,

    #[error("no co-visible objects between the two scenes")]
    NoCoVisibleObjects,

    #[error("trial set is empty")]
    EmptyTrialSet,

    #[error("could not place {n_boxes} boxes after {attempts} attempts")]
    PlacementFailure { n_boxes: usize, attempts: usize },

    #[error("index {index} out of range for scene of {len} boxes")]
    IndexOutOfRange { index: usize, len: usize },

    /// A file parsed but a field failed validation, or it did not parse.
    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
