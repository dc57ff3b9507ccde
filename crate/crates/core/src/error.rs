use thiserror::Error;

/// Errors produced by the library.
///
/// Variants are grouped by the caller's likely reaction: input problems
/// (`InvalidParameters`, `Domain`, `ParameterMismatch`, `Validation`),
/// configurations outside the supported model (`Unsupported`), and spectral
/// failures (`IndefinitePencil`, `PoleOfResolvent`, `NotFound`).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("argument {value} outside the domain [0, 1]")]
    Domain { value: f64 },

    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),

    #[error("moment recursion is singular at order {order} (|1 - sum d'a^k| = {residual:e})")]
    DegenerateMoments { order: usize, residual: f64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("no admissible partition found: {0}")]
    ApproximationFailure(String),

    #[error("pencil is indefinite: {0}")]
    IndefinitePencil(String),

    #[error("lambda = {lambda} is a pole of the resolvent")]
    PoleOfResolvent { lambda: f64 },

    #[error("eigenvalue not found: {0}")]
    NotFound(String),

    #[error("geometric regime: {0}")]
    GeometricCase(String),

    #[error("wrong asymptotic regime: {0}")]
    WrongRegime(String),
}

impl Error {
    /// Whether the error is a spectral failure rather than a bad input.
    pub fn is_spectral(&self) -> bool {
        matches!(
            self,
            Error::IndefinitePencil(_) | Error::PoleOfResolvent { .. } | Error::NotFound(_)
        )
    }

    /// Whether the error reports a configuration the model does not cover.
    pub fn is_unsupported(&self) -> bool {
        matches!(
            self,
            Error::Unsupported(_) | Error::GeometricCase(_) | Error::WrongRegime(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
