use thiserror::Error;

#[derive(Debug, Error)]
pub enum MfgError {
    /// An argument or coefficient evaluation left the admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural requirement on the model (sign change, monotonicity,
    /// bracket sign conditions) failed at runtime.
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Improper integral whose tail did not become negligible before the
    /// hard integration limit.
    #[error("tail truncation failed: {what} (last relative contribution {estimate:.3e})")]
    Truncation { what: String, estimate: f64 },

    #[error("root bracket diverged: {0}")]
    Divergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MfgError {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, MfgError::Config(_) | MfgError::Csv(_))
    }
}

pub type Result<T> = std::result::Result<T, MfgError>;
