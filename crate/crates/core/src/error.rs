use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid label {label} for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("labelled set is empty")]
    EmptyTrainingSet,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("loss gradient vanishes at this embedding")]
    ZeroGradient,
    #[error("anchor coincides with the unlabelled embedding")]
    DegenerateAnchor,
    #[error("no class anchors available")]
    NoAnchors,
    #[error("budget {budget} exceeds pool size {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },
    #[error("invalid k={k} for {n} points: {reason}")]
    InvalidK { k: usize, n: usize, reason: &'static str },
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("pool exhausted in round {round}: need {budget}, have {remaining}")]
    PoolExhausted { round: usize, budget: usize, remaining: usize },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("mismatched runs: {0}")]
    MismatchedRuns(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
