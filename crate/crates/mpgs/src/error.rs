//! Error type shared by every fallible operation in the crate.

use crate::objective::TopKPiece;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building instances or running solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Dimensions that do not describe a valid Stiefel manifold or that do
    /// not match the manifold an operation was given.
    #[error("invalid dimensions: {reason}")]
    InvalidDimensions { reason: String },

    /// A matrix claimed to be a manifold point violates `XᵀX = I` by more
    /// than the feasibility tolerance.
    #[error("point is off the manifold: ||XᵀX - I||_F = {defect:.3e} exceeds {tolerance:.1e}")]
    OffManifold { defect: f64, tolerance: f64 },

    /// The matrix to be polar-factorized is (numerically) rank deficient.
    #[error("polar factor undefined: smallest singular value {sigma_min:.3e} below {limit:.1e}")]
    SingularPolarFactor { sigma_min: f64, limit: f64 },

    /// A proximal map or Moreau envelope was queried with a scale that must
    /// be positive (or nonnegative, depending on the operation).
    #[error("invalid proximal scale {scale}: {reason}")]
    InvalidProxScale { scale: f64, reason: String },

    /// The denominator `g` of the fractional term is not strictly positive
    /// at the queried point, so the objective is undefined there.
    #[error("fractional denominator g(x) = {value:.6e} is not strictly positive")]
    NonpositiveDenominator { value: f64 },

    /// Enumerating the nearly-active pieces of a finite-max term exceeded
    /// the configured cap. The pieces found so far are returned so callers
    /// can inspect what blew up.
    #[error("more than {cap} nearly-active pieces; enumeration stopped")]
    PieceCapExceeded { cap: usize, partial: Vec<TopKPiece> },

    /// An operation that only applies to finite-max `h2` terms was invoked
    /// on a problem whose `h2` is not one.
    #[error("operation requires a finite-max h2 term: {operation}")]
    NotFiniteMax { operation: &'static str },

    /// The closed-form subproblem solver was called although `h1` is not
    /// identically zero.
    #[error("closed-form subproblem solve requires h1 = 0, got {h1}")]
    ClosedFormNeedsZeroProx { h1: String },

    /// The semismooth Newton solver was called on a subproblem whose `h1`
    /// is not an l1 norm.
    #[error("semismooth Newton solve requires h1 = lambda*||.||_1, got {h1}")]
    SsnNeedsL1 { h1: String },

    /// Adaptive step-size rule was requested but the problem carries no
    /// step-size hint (it was not built from a fractional instance).
    #[error("adaptive step-size rule requested but the problem provides no step-size hint")]
    MissingStepsizeHint,

    /// Backtracking could not find an acceptable step.
    #[error("line search failed after {backtracks} backtracks at t = {t:.3e}")]
    LineSearchFailure { backtracks: usize, t: f64 },

    /// A solver or operation was configured inconsistently.
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    /// Instance data violates a structural requirement (symmetry, positive
    /// definiteness, size relations, ...).
    #[error("invalid instance: {reason}")]
    InvalidInstance { reason: String },

    /// Repeated attempts failed to produce a critical-point certificate with
    /// a small enough residual.
    #[error(
        "could not certify a critical instance after {attempts} attempts; \
         best residual {best_residual:.3e}"
    )]
    CertificateFailed { attempts: usize, best_residual: f64 },

    /// A projection matrix handed to the classifier has a numerically zero
    /// column, so the projected features are degenerate.
    #[error("projection has a zero column (index {column})")]
    ZeroColumn { column: usize },

    /// An iterative routine hit its iteration cap before reaching its
    /// optimality tolerance.
    #[error("{what} did not converge within {iterations} iterations")]
    NonConverged { what: String, iterations: usize },

    /// A computation produced a non-finite number where a finite one is
    /// required.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// Binary or CSV serialization problems.
    #[error("serialization format error: {reason}")]
    Format { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(reason: impl Into<String>) -> Self {
        Error::InvalidDimensions { reason: reason.into() }
    }

    pub(crate) fn instance(reason: impl Into<String>) -> Self {
        Error::InvalidInstance { reason: reason.into() }
    }
}
