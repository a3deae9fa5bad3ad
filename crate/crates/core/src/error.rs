use thiserror::Error;

/// Everything that can go wrong in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("parameters are not supercritical: (b+d_r)(lambda-d_n) - a*d_r = {margin} <= 0")]
    NotSupercritical { margin: f64 },

    #[error("spectral gap x+ - x- = {gap:e} is below the minimum {min:e}")]
    SpectralGapTooSmall { gap: f64, min: f64 },

    #[error("extinction is certain for every period ({reason})")]
    TrivialExtinction { reason: &'static str },

    #[error("root not found: {0}")]
    NotFound(String),

    #[error("root validation failed: {0}")]
    ValidationFailed(String),

    #[error("state (0, 0) is absorbing")]
    AbsorbedState,

    #[error("moment-matrix product degenerates (a = 0 and p = 1): delta = -inf")]
    DegenerateProduct,

    #[error("not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("no sign change on [{lo}, {hi}]: verdicts {lo_verdict} and {hi_verdict}")]
    NoSignChange {
        lo: f64,
        hi: f64,
        lo_verdict: String,
        hi_verdict: String,
    },

    #[error("need at least two plottable points, got {0}")]
    TooFewPoints(usize),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures of an analytic precondition (as opposed to bad input).
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::NotSupercritical { .. }
                | Error::SpectralGapTooSmall { .. }
                | Error::TrivialExtinction { .. }
                | Error::NotFound(_)
                | Error::ValidationFailed(_)
                | Error::DegenerateProduct
                | Error::NotApplicable(_)
                | Error::NoSignChange { .. }
                | Error::TooFewPoints(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
