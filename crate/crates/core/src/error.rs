use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} is {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("tone grid is empty")]
    EmptyGrid,

    #[error("tone grid too coarse: step {step:.3e} exceeds 1/(2 max|t|) = {limit:.3e}")]
    GridTooCoarse { step: f64, limit: f64 },

    #[error("sample times are not an arithmetic progression")]
    NonUniformSamples,

    #[error("invalid sparsity {sparsity} for a vector of length {len}")]
    InvalidSparsity { sparsity: usize, len: usize },

    #[error("restricted least squares is singular on a support of size {support_size} (condition estimate {condition:.3e})")]
    SolverBreakdown { support_size: usize, condition: f64 },

    #[error("estimate is identically zero")]
    ZeroEstimate,

    #[error("metric undefined for a zero vector")]
    ZeroVector,

    #[error("bad dimensions: {0}")]
    BadDimensions(String),

    #[error("wrong feature link: expected {expected}, found {found}")]
    LinkMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse(_))
    }
}
