use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library. Every variant maps to a stable, machine
/// readable class string via [`Error::class`], which the CLI prints on failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sequence too short for second differences (length {0}, need at least 3)")]
    SequenceTooShort(usize),

    #[error("variance undefined (length {0}, need at least 2)")]
    VarianceUndefined(usize),

    #[error("CV undefined for non-positive mean ({0})")]
    NonPositiveMean(f64),

    #[error("{what} out of range: {value} (allowed {min}..={max})")]
    OutOfRange {
        what: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate label set: {0}")]
    DegenerateLabels(String),

    #[error("AUROC undefined: need at least one positive and one negative label")]
    AurocUndefined,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no tokens to score")]
    NoTokens,

    #[error("missing input for item {item_id} turn {turn}: {reason}")]
    MissingInput {
        item_id: String,
        turn: usize,
        reason: String,
    },

    #[error("item {item_id} ({backbone_id}) is missing turns {missing:?}")]
    MissingTurns {
        item_id: String,
        backbone_id: String,
        missing: Vec<usize>,
    },

    #[error("line {line}: duplicate key (item {item_id}, turn {turn}, backbone {backbone_id})")]
    DuplicateKey {
        line: usize,
        item_id: String,
        turn: usize,
        backbone_id: String,
    },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("insufficient items: {0}")]
    InsufficientItems(String),

    #[error("moment targets unreachable for {family}: {reason}")]
    UnreachableMoments { family: String, reason: String },

    #[error("backend error: {0}")]
    Backend(#[from] crate::dialogue::BackendError),

    #[error("labeling failed: {0}")]
    Labeling(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mixed config hashes among inputs: {0}")]
    MixedHashes(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> &'static str {
        match self {
            Error::SequenceTooShort(_) => "sequence_too_short",
            Error::VarianceUndefined(_) => "variance_undefined",
            Error::NonPositiveMean(_) => "non_positive_mean",
            Error::OutOfRange { .. } => "out_of_range",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite(_) => "non_finite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::AurocUndefined => "auroc_undefined",
            Error::Degenerate(_) => "degenerate_input",
            Error::NoTokens => "no_tokens",
            Error::MissingInput { .. } => "missing_input",
            Error::MissingTurns { .. } => "missing_turns",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::DuplicateId(_) => "duplicate_id",
            Error::MalformedLine { .. } => "malformed_line",
            Error::InsufficientItems(_) => "insufficient_items",
            Error::UnreachableMoments { .. } => "unreachable_moments",
            Error::Backend(_) => "backend",
            Error::Labeling(_) => "labeling",
            Error::Config(_) => "config",
            Error::MixedHashes(_) => "mixed_hashes",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn out_of_range(what: &'static str, value: usize, min: usize, max: usize) -> Self {
        Error::OutOfRange {
            what,
            value: value as i64,
            min: min as i64,
            max: max as i64,
        }
    }
}
