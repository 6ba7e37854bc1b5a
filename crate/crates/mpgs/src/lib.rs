//! Solvers for fractional composite optimization over the Stiefel manifold.
//!
//! This crate minimizes objectives of the form
//!
//! ```text
//!     F(X) = h1(X) - h2(X) + r(X) - f(X) / g(X)
//! ```
//!
//! over the Stiefel manifold `St(n, p) = { X : XᵀX = I }`, where `h1` is
//! convex with a cheap proximal map, `h2` is convex (possibly a finite max
//! of smooth pieces), `r` is smooth, `g` is smooth and positive on the
//! manifold, and `sqrt(f)` is weakly convex with `f >= 0`.
//!
//! Two first-order methods are provided:
//!
//! * [`solvers::mpgsa_solve`] — at each iterate a single convex subproblem
//!   restricted to the tangent space is solved and the step is accepted by a
//!   backtracking line search with sufficient decrease `(alpha / 2t) ||v||²`.
//! * [`solvers::empgsa_solve`] — when `h2` is a finite max, one subproblem is
//!   solved per nearly-active piece and the candidates compete; this lets the
//!   method escape points where the single-subproblem iteration stalls.
//!
//! The tangent-space subproblems are solved in closed form (`h1 = 0`), by an
//! accelerated gradient method on the dual (general `h1`), or by a semismooth
//! Newton method (`h1 = lambda ||.||_1`); see [`subproblem`].
//!
//! The [`instances`] module builds the sparse generalized-eigenvalue problems
//! used throughout the test suite: dense discriminant-analysis instances from
//! synthetic four-class data, and diagonal instances engineered so that a
//! known point is critical but not B-stationary, which separates the two
//! solvers' stationarity guarantees in a checkable way.

// Validation guards are written `!(x > 0.0)` on purpose: the negation is
// what rejects NaN. Routing them through `partial_cmp` would obscure that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod instances;
pub mod manifolds;
pub mod objective;
pub mod solvers;
pub mod stationarity;
pub mod subproblem;
pub mod tol;

pub use solvers::{SolveResult, SolverConfig, TerminationReason};

pub use error::{Error, Result};
pub use manifolds::{ManifoldPoint, Stiefel, TangentVector};
pub use objective::CompositeProblem;
pub use stationarity::{stationarity_report, StationarityReport};

