use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite coordinate at position {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular cross-Gram matrix (smallest singular value {min_sv:e}, largest {max_sv:e}); the vectors are not minimal relative to the given span")]
    SingularGram { min_sv: f64, max_sv: f64 },

    #[error("net would contain more than {cap} points; use a coarser resolution or a smaller subspace")]
    NetTooLarge { cap: usize },

    #[error("no spanning index exists for m = {m} inside the reference system of length {len}")]
    SpanningUndefined { m: usize, len: usize },

    #[error("truncation exhausted at depth {reached}: {detail}")]
    TruncationExhausted { reached: usize, detail: String },

    #[error("precondition `{invariant}` violated: {detail}")]
    Precondition { invariant: &'static str, detail: String },

    #[error("postcondition `{invariant}` failed: {detail}")]
    Postcondition { invariant: &'static str, detail: String },

    #[error("induction stuck at step {step}: {detail}")]
    InductionStuck { step: usize, detail: String },

    #[error("block {block}: cross-Gram stayed singular after {attempts} attempts; use a smaller block or a larger epsilon")]
    RetriesExhausted { block: usize, attempts: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable name of the violated invariant, if any.
    pub fn invariant(&self) -> Option<&'static str> {
        match self {
            Error::Precondition { invariant, .. } | Error::Postcondition { invariant, .. } => Some(invariant),
            Error::SingularGram { .. } => Some("cross_gram_invertible"),
            Error::NetTooLarge { .. } => Some("net_size_cap"),
            Error::SpanningUndefined { .. } => Some("spanned_by_reference"),
            Error::InductionStuck { .. } => Some("induction_step_feasible"),
            Error::RetriesExhausted { .. } => Some("block_gram_invertible"),
            _ => None,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
