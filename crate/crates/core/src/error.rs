use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the recommender engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension schedule is empty")]
    EmptySchedule,
    #[error("dimension sizes must be strictly increasing, got {0:?}")]
    NotStrictlyIncreasing(Vec<usize>),
    #[error("last dimension size {last} does not match full dimension {full_dim}")]
    LastSizeMismatch { last: usize, full_dim: usize },
    #[error("dimension sizes must be positive")]
    NonPositiveSize,
    #[error("invalid level weights: {0}")]
    InvalidWeights(String),

    #[error("malformed interaction at line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("dataset contains no interactions")]
    EmptyDataset,
    #[error("dataset has not been split into partitions")]
    NotSplit,
    #[error("unknown {kind} key `{key}`")]
    UnknownKey { kind: &'static str, key: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
    #[error("invalid split ratios: {0}")]
    InvalidRatio(String),

    #[error("level {level} out of range 1..={levels}")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("invalid block range ({x}, {y}) for {levels} levels")]
    InvalidBlockRange { x: usize, y: usize, levels: usize },
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("row {row} out of range for table with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },

    #[error("tuple has {got} negatives, expected {expected}")]
    WrongTupleArity { got: usize, expected: usize },
    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),
    #[error("blocks outside the target block are not zero ({0})")]
    NonZeroFrozenBlocks(String),

    #[error("user {0} has no negative items available")]
    NoNegativesAvailable(usize),
    #[error("invalid sampler config: {0}")]
    InvalidSampler(String),

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("test set is empty")]
    EmptyTestSet,
    #[error("partition `{0}` is empty")]
    EmptyPartition(&'static str),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptySchedule => "EmptySchedule",
            Error::NotStrictlyIncreasing(_) => "NotStrictlyIncreasing",
            Error::LastSizeMismatch { .. } => "LastSizeMismatch",
            Error::NonPositiveSize => "NonPositiveSize",
            Error::InvalidWeights(_) => "InvalidWeights",
            Error::MalformedLine { .. } => "MalformedLine",
            Error::EmptyDataset => "EmptyDataset",
            Error::NotSplit => "NotSplit",
            Error::UnknownKey { .. } => "UnknownKey",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InfeasibleSpec(_) => "InfeasibleSpec",
            Error::InvalidRatio(_) => "InvalidRatio",
            Error::LevelOutOfRange { .. } => "LevelOutOfRange",
            Error::InvalidBlockRange { .. } => "InvalidBlockRange",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::RowOutOfRange { .. } => "RowOutOfRange",
            Error::WrongTupleArity { .. } => "WrongTupleArity",
            Error::ScheduleMismatch(_) => "ScheduleMismatch",
            Error::NonZeroFrozenBlocks(_) => "NonZeroFrozenBlocks",
            Error::NoNegativesAvailable(_) => "NoNegativesAvailable",
            Error::InvalidSampler(_) => "InvalidSampler",
            Error::UnknownVariant(_) => "UnknownVariant",
            Error::NonFiniteGradient(_) => "NonFiniteGradient",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::EmptyTestSet => "EmptyTestSet",
            Error::EmptyPartition(_) => "EmptyPartition",
            Error::Checkpoint(_) => "Checkpoint",
            Error::File { .. } => "File",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
