use thiserror::Error;

use crate::data::EnvLabel;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains a non-finite value")]
    NonFiniteInput,

    #[error("environment `{0}` has too few rows for the requested regression")]
    InsufficientSamples(EnvLabel),

    #[error("covariance submatrix is singular")]
    SingularCovariance,

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected} predictors, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("at least two distinct training environments are required, got {0}")]
    NoEnvironmentVariation(usize),

    #[error("no candidate feature passed the selection threshold")]
    EmptySelection,

    #[error("training data for environment `{0}` has no response column")]
    MissingResponse(EnvLabel),

    #[error("environment `{0}` is not defined by the model specification")]
    UnknownEnvironment(EnvLabel),

    #[error("random graph generation gave up after {0} attempts")]
    GenerationFailed(usize),

    #[error("{0} predictors yields too many candidates; pass a maximum subset size")]
    TooManyCandidates(usize),

    #[error("unknown experiment preset `{0}`")]
    UnknownPreset(String),

    #[error("experiment aborted: {failed} of {total} models failed")]
    ExperimentAborted { failed: usize, total: usize },

    #[error("invalid specification: {0:?}")]
    InvalidSpec(Vec<crate::scm::Violation>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed dataset: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
