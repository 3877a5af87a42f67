use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid distribution descriptor `{0}`")]
    InvalidLaw(String),

    #[error("invalid prediction matrix: {0}")]
    InvalidMatrix(String),

    #[error("zero-norm row for model `{model_id}` (constant predictions)")]
    ZeroNormRow { model_id: String },

    #[error("degenerate spectrum: all singular values are zero")]
    DegenerateSpectrum,

    #[error("Dyson normalizer nonpositive for {side} factor ({value})")]
    DysonNormalizer { side: &'static str, value: f64 },

    #[error("AMP divergence at iteration {iteration}")]
    AmpDivergence { iteration: usize },

    #[error("zero variance input")]
    ZeroVariance,

    #[error("zero vector input")]
    ZeroVector,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("below the BBP threshold: lambda^2 * sqrt(alpha) = {0} <= 1")]
    BelowThreshold(f64),

    #[error("non-finite expectation in state evolution at step {0}")]
    NonFiniteExpectation(usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sample id mismatch: {0}")]
    IdMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed user input rather than the numerical pipeline.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::InvalidLaw(_)
                | Error::InvalidMatrix(_)
                | Error::Parse { .. }
                | Error::IdMismatch(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
