//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by configuration validation, the detectors, and the
/// bound evaluators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid configuration; the message names the offending field.
    #[error("config: {0}")]
    Config(String),

    /// Matrix dimensions do not line up; the message names the offending
    /// dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A least-squares solve was requested on more columns than rows.
    #[error("underdetermined: support of size {} exceeds code length {code_len} (support {support:?})", support.len())]
    Underdetermined {
        support: Vec<usize>,
        code_len: usize,
    },

    /// The selected code submatrix is rank deficient.
    #[error("singular-support: code submatrix for {support:?} is rank deficient")]
    SingularSupport { support: Vec<usize> },

    /// OTD thresholds are only defined under power control.
    #[error("otd-requires-power-control: {0}")]
    PowerControlRequired(String),

    /// Bound formulas need `ln ln L` bounded away from zero.
    #[error("loglog-domain: code length {0} is below the minimum of 16")]
    LogLogDomain(usize),

    /// The inequality solver hit its search cap without a solution.
    #[error("cap-exceeded: no code length at or below {0} satisfies the inequality")]
    CapExceeded(u64),

    /// Population counts handed to a bound evaluator are inconsistent.
    #[error("invalid populations: {0}")]
    InvalidPopulations(String),
}

pub type Result<T> = std::result::Result<T, Error>;
