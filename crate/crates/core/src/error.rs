use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("text space has {size} texts, above the enumeration cap of {cap}")]
    EnumerationTooLarge { size: f64, cap: u64 },

    #[error("invalid text: {0}")]
    InvalidText(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("cannot fit a policy to an empty corpus")]
    EmptyCorpus,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("design matrix is rank-deficient; use a positive ridge penalty")]
    SingularDesign,

    #[error("sample {index} has zero density under the randomization distribution (overlap violated)")]
    ZeroSupport { index: usize },

    #[error("non-finite importance weight at sample {index}")]
    NonFiniteWeight { index: usize },

    #[error("dataset is already observational")]
    AlreadyObservational,

    #[error("dataset is observational; supply an estimated randomization density explicitly")]
    NotRandomized,

    #[error("missing input for objective: {0}")]
    MissingInput(&'static str),

    #[error("objective estimate became non-finite at step {step}")]
    DivergenceDetected { step: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
