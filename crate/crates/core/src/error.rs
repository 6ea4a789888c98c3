use thiserror::Error;

use crate::control::KktDiagnostics;
use crate::state::NewtonReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("point {point:?} lies outside the mesh domain")]
    PointOutsideDomain { point: Vec<f64> },

    #[error("monotonicity violated: derivative weight {value:e} < 0 at {point:?}")]
    MonotonicityViolation { point: Vec<f64>, value: f64 },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    LinearSolveFailure { iterations: usize, residual: f64 },

    #[error("Newton iteration failed: {0}")]
    NonlinearSolveFailure(NewtonReport),

    #[error("meshes are not nested: {0}")]
    MeshMismatch(String),

    #[error("projected gradient stalled after {iterations} iterations (projection residual {residual:e})")]
    OptimizerStalled {
        iterations: usize,
        residual: f64,
        diagnostics: Box<KktDiagnostics>,
    },

    #[error("rate fit needs at least 3 positive samples, got {0}")]
    InsufficientData(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid problem:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("at level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_level(self, level: usize) -> Error {
        match self {
            e @ Error::AtLevel { .. } => e,
            other => Error::AtLevel {
                level,
                source: Box::new(other),
            },
        }
    }

    /// Strips any level annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLevel { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad input rather than a failed solve.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::InvalidPolygon(_)
                | Error::PointOutsideDomain { .. }
                | Error::Parse(_)
                | Error::Validation(_)
                | Error::Io { .. }
                | Error::DimensionMismatch(_)
        )
    }
}
