//! Numerical tolerances used across the crate, with the reasoning that
//! picked each value. Keeping them in one place makes the accuracy
//! contracts auditable and keeps magic numbers out of the algorithms.

/// Feasibility tolerance for manifold membership, `||XᵀX - I||_F`.
///
/// Points produced by a thin-SVD polar factorization of a well-conditioned
/// matrix are orthonormal to a few ulps; 1e-10 leaves two orders of margin
/// over accumulated round-off without accepting genuinely infeasible input.
pub const FEASIBILITY: f64 = 1e-10;

/// Below this smallest singular value the polar factor of a matrix is
/// considered undefined and retraction/orthonormalization fails.
pub const POLAR_SIGMA_MIN: f64 = 1e-12;

/// Asymmetry in a multiplier passed to the normal-constraint adjoint that is
/// silently symmetrized; anything larger is symmetrized with a warning since
/// it usually indicates a bug in the caller.
pub const MULTIPLIER_SYMMETRY_WARN: f64 = 1e-12;

/// Scale factor for the outer stopping test: terminate when
/// `||v||²_F / t² < VTOL_SCALE * n * p`.
pub const VTOL_SCALE: f64 = 1e-8;

/// Default band half-width for detecting nearly-active pieces of a
/// finite-max function.
pub const ACTIVE_PIECE_ETA: f64 = 1e-8;

/// Hard cap on the number of nearly-active pieces enumerated per iterate.
/// The piece subproblems are solved one by one, so an exponential blow-up
/// (possible when many magnitudes tie) must be cut off explicitly.
pub const PIECE_CAP: usize = 64;

/// Inner solvers drive the dual KKT residual below
/// `INNER_TOL_SCALE * sqrt(n * p)`, comfortably tighter than any outer test.
pub const INNER_TOL_SCALE: f64 = 1e-10;

/// The stationarity oracles solve their probe subproblems two orders
/// tighter still: their answers are compared against certification
/// thresholds (1e-7 and smaller), so the oracle's own noise floor must sit
/// well below those.
pub const ORACLE_INNER_TOL_SCALE: f64 = 1e-12;

/// Default iteration budget for the inner (dual) solvers.
pub const INNER_MAX_ITER: usize = 200_000;

/// Step sizes from the adaptive rule are clamped to this interval.
pub const STEPSIZE_LO: f64 = 1e-6;
pub const STEPSIZE_HI: f64 = 1e6;

/// Relative slack in line-search acceptance tests. Sufficient-decrease
/// comparisons are made up to `LINE_SEARCH_SLACK * max(1, |F|)` so that a
/// mathematically tied comparison cannot fail on the last floating-point bit;
/// the slack is three orders below the 1e-9 accuracy to which the descent
/// inequalities are verified.
pub const LINE_SEARCH_SLACK: f64 = 1e-12;

/// An entry of a solution matrix counts as zero when its magnitude is below
/// `SPARSITY_SCALE * max_ij |X_ij|`.
pub const SPARSITY_SCALE: f64 = 1e-5;

/// Iterates are re-orthonormalized (polar projection back onto the manifold)
/// every this many outer iterations to stop feasibility drift.
pub const REORTHONORMALIZE_EVERY: usize = 100;

/// Largest acceptable residual `||U ζ + γ x̄ + w¹ - w²||` for a constructed
/// critical-point certificate; instances whose nonnegative least-squares
/// solve cannot reach this are resampled.
pub const CERTIFICATE_RESIDUAL: f64 = 1e-8;
