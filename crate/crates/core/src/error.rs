use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, malformed grid or non-finite input.
    #[error("malformed model: {0}")]
    Structure(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    /// Inputs outside an operation's domain (negative portfolio weights,
    /// oracle preconditions that do not hold, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(
        "minimizer stopped after {iterations} iterations with KKT residual {residual:e} \
         (last iterate {last_iterate:?})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    /// The safeguard clamp `alpha <= P <= 1` was hit during integration.
    #[error(
        "truncation active at t = {t} (P+ = {p_plus}, P- = {p_minus}, alpha = {alpha}); \
         retry with more steps"
    )]
    TruncationActive {
        t: f64,
        p_plus: f64,
        p_minus: f64,
        alpha: f64,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_)
                | Error::NonConvergence { .. }
                | Error::TruncationActive { .. }
                | Error::Invariant(_)
        )
    }
}
