use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("safe-prime search exhausted after {0} candidates")]
    SearchExhausted(u64),

    #[error("bit length {0} below the supported minimum of {1}")]
    BitsTooSmall(u64, u64),

    #[error("value is not in the (1+N)-generated subgroup")]
    NotInSubgroup,

    #[error("plaintext magnitude exceeds bound: {0}")]
    PlaintextBound(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("round mismatch: expected {expected}, got {actual}")]
    RoundMismatch { expected: u64, actual: u64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("zero-norm global layer {0}")]
    ZeroNorm(usize),

    #[error("need at least {k} points for {k} clusters, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("no admissible perturbation for the initial model")]
    NoAdmissibleEta,

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
