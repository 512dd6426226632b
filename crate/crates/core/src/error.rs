use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("column `{0}` is fully missing")]
    ColumnFullyMissing(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value {value} out of range for feature `{feature}` (cardinality {cardinality})")]
    ValueOutOfRange {
        feature: String,
        value: u32,
        cardinality: u32,
    },

    #[error("conditioning on zero-probability evidence")]
    ZeroProbabilityEvidence,

    #[error("row {0} has zero-probability evidence")]
    ZeroProbabilityRow(usize),

    #[error("row {0} has a missing target")]
    MissingTarget(usize),

    #[error("feature `{0}` is missing and the evaluation policy forbids it")]
    MissingFeature(String),

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("malformed dump: {0}")]
    Dump(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("threshold {threshold} outside the binned range of feature `{feature}`")]
    ThresholdOutOfRange { feature: String, threshold: f64 },

    #[error("cyclic structure at node {0}")]
    CyclicTree(i64),

    #[error("forest has {leaves} leaves, above the joint-refit limit of {limit}")]
    ForestTooLarge { leaves: usize, limit: usize },

    #[error("non-finite entry in linear system")]
    NonFinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::ColumnFullyMissing(_) => "column_fully_missing",
            Error::Parse { .. } => "parse",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ValueOutOfRange { .. } => "value_out_of_range",
            Error::ZeroProbabilityEvidence => "zero_probability_evidence",
            Error::ZeroProbabilityRow(_) => "zero_probability_row",
            Error::MissingTarget(_) => "missing_target",
            Error::MissingFeature(_) => "missing_feature",
            Error::MalformedTree(_) => "malformed_tree",
            Error::Dump(_) => "dump",
            Error::UnknownFeature(_) => "unknown_feature",
            Error::ThresholdOutOfRange { .. } => "threshold_out_of_range",
            Error::CyclicTree(_) => "cyclic_tree",
            Error::ForestTooLarge { .. } => "forest_too_large",
            Error::NonFinite => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
