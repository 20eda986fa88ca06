use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A vortex position lies outside the domain.
    #[error("position ({x}, {y}) outside domain [0, {side}]^2")]
    DomainViolation { x: f64, y: f64, side: f64 },

    /// Two vortices closer than the singularity guard (log would blow up).
    #[error("singular configuration: vortices {i} and {j} at distance {dist:e} (guard {guard:e})")]
    SingularConfiguration {
        i: usize,
        j: usize,
        dist: f64,
        guard: f64,
    },

    /// Inverse temperature below the admissible floor.
    #[error("beta = {beta} below admissible floor beta_min = {beta_min}")]
    Admissibility { beta: f64, beta_min: f64 },

    /// Free energy undefined at beta = 0 (the 1/beta prefactor).
    #[error("free energy undefined at beta = 0")]
    ZeroBeta,

    /// Macrostate enumeration would exceed the configured cap.
    #[error("enumeration of {count} macrostates exceeds cap {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },

    /// A probability vector failed its normalization precondition.
    #[error("distribution not normalized: sum = {sum} (tolerance {tol})")]
    Normalization { sum: f64, tol: f64 },

    /// An iterative solver hit its iteration limit; the trace carries the
    /// last few residuals for diagnosis.
    #[error(
        "no convergence after {iterations} iterations; residual {residual:e}; trace {trace:?}"
    )]
    IterationLimit {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    /// The quadrature oracle did not pass its two-resolution check.
    #[error("oracle not converged: coarse {coarse}, fine {fine} (relative gap {gap:e} > {tol:e})")]
    OracleUnconverged {
        coarse: f64,
        fine: f64,
        gap: f64,
        tol: f64,
    },

    /// Density blow-up detected during continuum iteration (beta too negative).
    #[error("density blow-up: max density {max_density:e} exceeds cap {cap:e} at beta = {beta}")]
    DensityBlowUp {
        beta: f64,
        max_density: f64,
        cap: f64,
    },

    /// Invalid parameter combination.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
