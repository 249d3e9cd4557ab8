use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core. None of them are recoverable by
/// retrying; they all describe bad inputs or degenerate data.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid probability {value} at rank {index}")]
    InvalidProbability { index: usize, value: f64 },

    #[error("top-k probabilities are not sorted in non-increasing order at rank {0}")]
    UnsortedProbabilities(usize),

    #[error("top-k probabilities sum to {0}, exceeding 1")]
    ProbabilityMass(f64),

    #[error("invalid confidence value {value} at position {index}")]
    InvalidConfidence { index: usize, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("both classes are required, found only {0}")]
    SingleClass(&'static str),

    #[error("class centroids coincide; Davies-Bouldin index is undefined")]
    CoincidentCentroids,

    #[error("question `{0}` appears in more than one split")]
    QuestionLeakage(String),

    #[error("missing score for trace `{0}`")]
    MissingScore(String),

    #[error("questions without ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("training failed: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
