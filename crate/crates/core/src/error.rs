use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Input,
    Solver,
    Validation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("argument |z| = {modulus:e} outside the supported range [{min:e}, {max:e}]")]
    AccuracyUnsupported { modulus: f64, min: f64, max: f64 },

    #[error("kernel singularity: evaluation points coincide (distance {0:e})")]
    Singular(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("cell system singular at exceptional value alpha = {alpha} (sigma_min = {sigma_min:e})")]
    ExceptionalValue { alpha: f64, sigma_min: f64 },

    #[error("null-space dimension ambiguous at alpha = {alpha}: {low} vs {high} singular values under threshold")]
    AmbiguousDimension { alpha: f64, low: usize, high: usize },

    #[error("mode basis degenerate: {0}")]
    BasisDegeneracy(String),

    #[error("evanescence violated: {0}")]
    EvanescenceViolation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("wavenumber is not regular: {0}")]
    NotRegular(String),

    #[error("limiting absorption failed to converge: {0}")]
    LimitingAbsorption(String),

    #[error("iteration did not converge after {iterations} steps (residual {residual:e}, condition estimate {condition:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        condition: f64,
    },

    #[error("uniqueness not certified: {0}")]
    UniquenessNotCertified(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Parse { .. }
            | Error::Io(_)
            | Error::InvalidGrid(_)
            | Error::GridMismatch(_)
            | Error::Precondition(_)
            | Error::UniquenessNotCertified(_) => Category::Input,
            Error::NotRegular(_) => Category::Validation,
            _ => Category::Solver,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
