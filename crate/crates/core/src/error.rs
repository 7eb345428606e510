use thiserror::Error;

use crate::douglas::MixedCheckReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("operator entries must be finite ({0})")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The exact constraint `Bc h = bc` has no solution at the requested tolerance.
    #[error("infeasible exact constraint: residual {residual:.3e} exceeds {threshold:.3e}")]
    InfeasibleConstraint { residual: f64, threshold: f64 },

    #[error("inclusion violated: residual {residual:.3e} exceeds {threshold:.3e}")]
    InclusionViolated { residual: f64, threshold: f64 },

    #[error("mixed check failed (majorization_ok = {}, sequential_defect = {:.3e})", .0.majorization_ok, .0.sequential_defect)]
    CheckFailed(Box<MixedCheckReport>),

    #[error("epsilon not met: achieved {achieved:.3e}, requested {requested:.3e}")]
    EpsilonNotMet { achieved: f64, requested: f64 },

    #[error("tolerance failure: {what} = {value:.3e} exceeds {threshold:.3e}")]
    ToleranceFailure {
        what: &'static str,
        value: f64,
        threshold: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::InvalidInput(_) | Error::Io(_) => 2,
            Error::DimensionMismatch { .. } | Error::NonFinite(_) => 2,
            Error::InfeasibleConstraint { .. } => 3,
            Error::InclusionViolated { .. }
            | Error::CheckFailed(_)
            | Error::EpsilonNotMet { .. }
            | Error::ToleranceFailure { .. } => 4,
            Error::NumericalFailure(_) => 5,
        }
    }
}
