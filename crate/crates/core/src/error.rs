use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Fewer than two distinct bin boundaries could be built for a feature.
    #[error("feature {feature} is degenerate: {reason}")]
    DegenerateFeature { feature: usize, reason: String },

    #[error("inconsistent embedding spec for feature {feature}: {reason}")]
    InconsistentSpec { feature: usize, reason: String },

    #[error("non-finite activation encountered in {stage}")]
    NonFiniteActivation { stage: String },

    #[error("backward called without a preceding training-mode forward pass")]
    MissingForwardState,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("split `{0}` would receive no rows")]
    EmptySplit(&'static str),

    #[error("target is constant; the dataset is degenerate")]
    DegenerateTarget,

    #[error("{runs} runs cannot be divided into {groups} equal groups")]
    IndivisibleSeeds { runs: usize, groups: usize },

    #[error("unknown model name `{name}`; valid embeddings: {valid}")]
    UnknownModel { name: String, valid: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn degenerate(feature: usize, reason: impl Into<String>) -> Self {
        Error::DegenerateFeature {
            feature,
            reason: reason.into(),
        }
    }
}
