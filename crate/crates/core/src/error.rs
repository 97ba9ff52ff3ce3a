use thiserror::Error;

/// Errors raised by the estimation engine.
#[derive(Debug, Error)]
pub enum BsqrError {
    /// An argument lies outside the domain of the operation (e.g. `tau = 1.5`).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Input data violates a structural requirement.
    #[error("invalid data: {0}")]
    Data(String),

    #[error("sampler aborted: {0}")]
    Sampler(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BsqrError {
    /// True for failures caused by numerics rather than by the caller's input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, BsqrError::Numeric(_) | BsqrError::Sampler(_))
    }
}

pub type Result<T> = std::result::Result<T, BsqrError>;

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(BsqrError::Domain(format!(
            "quantile level tau must lie in (0, 1), got {tau}"
        )))
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(BsqrError::Domain(format!("{name} must be positive and finite, got {value}")))
    }
}
