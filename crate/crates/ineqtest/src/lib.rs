//! Kernel-based one-sided `L_p` tests of functional inequalities.
//!
//! Given i.i.d. observations of `(Y, X)` with `Y ∈ R^J`, `X ∈ R^d`, the library
//! tests
//!
//! ```text
//! H0: m_j(x) = E[Y_j | X = x] ≤ 0   for all x in a domain and all j
//! ```
//!
//! (or `m_j(x) = 0` in equality mode) by integrating the positive part (or
//! absolute value) of a kernel regression numerator raised to the `p`-th power,
//! centering and studentizing it so the statistic is asymptotically standard
//! normal, and rejecting for large values.
//!
//! The crate is organized to mirror that pipeline:
//!
//! * [`kernel`] — compactly supported product kernels, their moments, and the
//!   overlap correlation profile that drives the variance construction;
//! * [`gaussian`] — standard normal density/CDF/quantile primitives;
//! * [`lambda`] — moments and pair covariances of one-/two-sided powers of
//!   correlated normals, and the `q` constants built from them;
//! * [`data`] — datasets, domain boxes, and integration grids;
//! * [`estimators`] — the kernel estimators evaluated over a grid;
//! * [`statistic`] — assembly of the studentized statistic and the test report;
//! * [`power`] — local asymptotic power formulas and optimal weights;
//! * [`simulation`] — data-generating processes, the bandwidth rule, and the
//!   Monte Carlo experiment harness;
//! * [`reference`] — deliberately naive re-implementations used to validate the
//!   optimized pipeline;
//! * [`cli`] — the command-line surface.

pub mod cli;
pub mod data;
pub mod estimators;
pub mod gaussian;
pub mod kernel;
pub mod lambda;
pub mod power;
pub mod quad;
pub mod reference;
pub mod simulation;
pub mod statistic;

/// Crate version string embedded in reports for reproducibility.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Unified error type for the whole pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown kernel '{0}' (available: quartic2u, uniform, triangular)")]
    UnknownKernel(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("outcome index {index} out of range (J = {n_outcomes})")]
    IndexOutOfRange { index: usize, n_outcomes: usize },
    #[error("correlation argument {0} outside [-1, 1]")]
    CorrelationOutOfRange(f64),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("no direction: {0}")]
    NoDirection(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
}

pub type Result<T> = std::result::Result<T, Error>;
