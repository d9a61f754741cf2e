use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by evaluation, transformation, simulation and search.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite {what} (component {index}) at evaluation point")]
    NonFinite { what: &'static str, index: usize },

    /// The Hessian block that must be inverted is numerically singular.
    /// Signals that the full-rank hypothesis of the blockwise form fails
    /// at this point.
    #[error("singular Hessian block (condition estimate {cond:.3e})")]
    SingularHessian { cond: f64 },

    #[error("Newton solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("integration step produced a non-finite state at t = {t}")]
    StepFailure { t: f64 },

    #[error("adaptive step size underflowed ({dt:.3e} s) at t = {t}; system too stiff")]
    TooStiff { t: f64, dt: f64 },

    #[error("constrained output drifted from its set-point at t = {t} (|y1 - y1_bar| = {drift:.3e})")]
    DriftAlarm { t: f64, drift: f64 },

    #[error("declared structure flag `{flag}` contradicts sampled evidence (violation {violation:.3e})")]
    DeclarationMismatch { flag: &'static str, violation: f64 },

    #[error("trajectory carries no samples for storage `{0}`")]
    MissingStorage(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    Unsupported(String),
}
