//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, signal generation, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// A polynomial that must be monic in `q^-1` (leading coefficient 1) is not.
    #[error("polynomial is not monic in q^-1: leading coefficient {0}")]
    NotMonic(f64),

    /// An operation requiring degree >= 1 received a degree-0 polynomial.
    #[error("polynomial has degree 0; an operation on its roots requires degree >= 1")]
    DegreeZero,

    /// A root multiset for polynomial construction is not closed under conjugation.
    #[error("root multiset is not closed under complex conjugation (offending root {re}{im:+}i)")]
    RootsNotConjugateClosed { re: f64, im: f64 },

    /// A filter denominator has a root on or outside the unit circle.
    #[error("unstable filter denominator: maximum root magnitude {0:.6}")]
    UnstableDenominator(f64),

    /// A closed-loop interconnection is unstable.
    #[error("unstable closed loop: characteristic root magnitude {0:.6}")]
    UnstableClosedLoop(f64),

    /// Model invariants (delay structure, stability, coprimality) are violated.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A least-squares system is numerically rank deficient.
    #[error(
        "rank-deficient least-squares system: condition estimate {condition:.3e} \
         (diagonal ratio below {threshold:.1e})"
    )]
    RankDeficient { condition: f64, threshold: f64 },

    /// Not enough samples for the requested regression or model order.
    #[error("data record too short: need more than {needed} samples, got {got}")]
    DataTooShort { needed: usize, got: usize },

    /// An order/grid argument is structurally invalid.
    #[error("invalid order specification: {0}")]
    InvalidOrder(String),

    /// A scalar parameter is outside its admissible range.
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    /// Noise scaling is impossible because the noise-free output has no energy.
    #[error("cannot scale noise: noise-free output has zero energy")]
    ZeroEnergyInput,

    /// The random model sampler exhausted its retry budget.
    #[error("random model sampler exhausted {0} retries without a valid model")]
    RetryBudgetExhausted(usize),

    /// The accuracy metric is undefined for a constant truth vector.
    #[error("fit metric undefined: true parameter vector is constant")]
    ConstantTruth,

    /// Dataset or configuration file I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Dataset or configuration (de)serialization failure.
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    /// A dataset file does not match the expected `t,u,y` layout.
    #[error("malformed dataset file: {0}")]
    MalformedDataset(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
