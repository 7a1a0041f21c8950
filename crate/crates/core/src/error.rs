use thiserror::Error;

pub type Result<T> = std::result::Result<T, MnpcaError>;

#[derive(Debug, Error)]
pub enum MnpcaError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rank below requested r (requested {requested}, singular value {index} is {value:e})")]
    RankDeficient {
        requested: usize,
        index: usize,
        value: f64,
    },

    #[error("repeated singular value at positions {index} and {next} (gap {gap:e})")]
    RepeatedSingularValue { index: usize, next: usize, gap: f64 },

    #[error("kernel parity mismatch: both kernels must be odd, both even, or both linear-raw (got {left} and {right})")]
    ParityMismatch { left: String, right: String },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("classifier: {0}")]
    Classifier(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MnpcaError {
    /// Stable taxonomy name, used by the CLI on stderr.
    pub fn kind(&self) -> &'static str {
        match self {
            MnpcaError::DimensionMismatch(_) => "dimension_mismatch",
            MnpcaError::NonFinite(_) => "non_finite",
            MnpcaError::Empty(_) => "empty_input",
            MnpcaError::InvalidParameter(_) => "invalid_parameter",
            MnpcaError::RankDeficient { .. } => "rank_deficient",
            MnpcaError::RepeatedSingularValue { .. } => "repeated_singular_value",
            MnpcaError::ParityMismatch { .. } => "parity_mismatch",
            MnpcaError::NotSymmetric(_) => "not_symmetric",
            MnpcaError::IllConditioned(_) => "ill_conditioned",
            MnpcaError::Classifier(_) => "classifier",
            MnpcaError::Parse(_) => "parse",
            MnpcaError::Io(_) => "io",
            MnpcaError::Json(_) => "json",
            MnpcaError::Csv(_) => "csv",
        }
    }

    /// Errors caused by the singular structure of a single observation.
    /// The experiment harness redraws a replicate when it sees one of these.
    pub fn is_svd_degeneracy(&self) -> bool {
        matches!(
            self,
            MnpcaError::RankDeficient { .. } | MnpcaError::RepeatedSingularValue { .. }
        )
    }
}
