use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QslError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max |m - m†| = {0:.3e})")]
    NotHermitian(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("parameter `{name}` out of range: {detail}")]
    OutOfRange { name: &'static str, detail: String },

    #[error("fidelity {0} exceeds 1 beyond rounding slack")]
    FidelityExcursion(f64),

    #[error("map is not completely positive and trace preserving: {0}")]
    NotCpt(String),

    #[error("integration failed at step {step}: {detail}")]
    Integration { step: usize, detail: String },

    #[error("invalid trajectory: {0}")]
    Trajectory(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("inconsistent speed-limit inputs: {0}")]
    InconsistentQsl(String),

    #[error("closed-form evolution: {0}")]
    ClosedForm(String),
}

pub type Result<T> = std::result::Result<T, QslError>;

pub(crate) fn out_of_range(name: &'static str, detail: impl Into<String>) -> QslError {
    QslError::OutOfRange {
        name,
        detail: detail.into(),
    }
}
