use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unknown user id `{0}`")]
    UnknownUser(String),
    #[error("duplicate user id `{0}`")]
    DuplicateUser(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(
        "zero-link prior is non-positive: ln({zero_links}/{k}^2) <= 0; set lambda0 manually"
    )]
    NonPositiveLambda0 { zero_links: f64, k: usize },
    #[error("user {0} has no documents and no links; theta-hat is undefined")]
    EmptyUser(usize),
    #[error("label view empty; run unsupervised")]
    EmptyLabelView,
    #[error("classifier needs at least one example of each class")]
    SingleClass,
    #[error("need at least {needed} labeled users, found {found}")]
    InsufficientLabels { needed: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vocabularies differ")]
    VocabMismatch,
    #[error("instance too large for enumeration ({0} words + links > 64)")]
    InstanceTooLarge(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty feature set")]
    EmptyFeatures,
    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
