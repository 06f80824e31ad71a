//! Error type shared by all modules.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter fails a validity constraint (margins, rates, allocations).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested sizing has no solution (e.g. effect coincides with the margin).
    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),

    /// Quadrature failed to reach the requested tolerance. Carries the best
    /// estimate so callers can decide whether it is still usable.
    #[error("quadrature did not reach tolerance after {subdivisions} subdivisions (estimate {estimate}, error {error_estimate})")]
    QuadratureAccuracy {
        estimate: f64,
        error_estimate: f64,
        subdivisions: u32,
    },

    /// Root finding was asked to bisect an interval without a sign change.
    #[error("no sign change bracketed on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    /// The mean-follow-up comparator only supports a common dispersion and
    /// dropout hazard across arms.
    #[error("comparator unsupported: {0}")]
    UnsupportedComparator(String),

    /// Model fitting requires at least one event per arm.
    #[error("boundary data: arm {0} has no events")]
    ZeroEventArm(u8),

    /// Data cannot identify the requested quantity (e.g. zero residual
    /// degrees of freedom for the Pearson dispersion).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// An iterative fit exhausted its iteration budget.
    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: u32 },
}
