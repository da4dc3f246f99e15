use crate::data::Group;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("row {row}: source `{source_name}` is only partially observed")]
    PartialBlock { row: usize, source_name: String },

    #[error("row {row}: every source is missing")]
    AllMissingRow { row: usize },

    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    NonNumericValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no missingness pattern survives filtering")]
    EmptyAfterFilter,

    #[error("every observation of group {0} was removed")]
    GroupVanished(Group),

    #[error("non-finite dissimilarity between rows {i} and {j}")]
    NumericOverflow { i: usize, j: usize },

    #[error("k must be at least 1 (got {0})")]
    InvalidK(usize),

    #[error("row {row} has no neighbor candidates")]
    EmptyCandidates { row: usize },

    #[error("pattern {pattern} has no candidates for averaging")]
    DegeneratePattern { pattern: usize },

    #[error("pattern {pattern} has m = {m}, n = {n}; closed-form null moments need both >= 2")]
    InsufficientPatternSize { pattern: usize, m: usize, n: usize },

    #[error("enumeration needs {assignments:.3e} label assignments (limit {limit})")]
    TooLarge { assignments: f64, limit: u64 },

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            Error::InvalidSchema(_) => "INVALID_SCHEMA",
            Error::PartialBlock { .. } => "PARTIAL_BLOCK",
            Error::AllMissingRow { .. } => "ALL_MISSING_ROW",
            Error::NonNumericValue { .. } => "NON_NUMERIC_VALUE",
            Error::EmptyAfterFilter => "EMPTY_AFTER_FILTER",
            Error::GroupVanished(_) => "GROUP_VANISHED",
            Error::NumericOverflow { .. } => "NUMERIC_OVERFLOW",
            Error::InvalidK(_) => "INVALID_K",
            Error::EmptyCandidates { .. } => "EMPTY_CANDIDATES",
            Error::DegeneratePattern { .. } => "DEGENERATE_PATTERN",
            Error::InsufficientPatternSize { .. } => "INSUFFICIENT_PATTERN_SIZE",
            Error::TooLarge { .. } => "TOO_LARGE",
            Error::SingularCovariance => "SINGULAR_COVARIANCE",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::Io(_) => "IO",
            Error::Csv(_) => "CSV",
            Error::Json(_) => "JSON",
        }
    }
}
