//! Problem builders and data generators for the shipped benchmark families.
//!
//! Three instance families are provided:
//!
//! * [`SgepInstance`] — sparse generalized trace-ratio problems
//!   `min λ‖X‖₁ − λ‖X‖₍K₎ − tr(XᵀAX)/tr(XᵀBX)` over the Stiefel manifold,
//!   with a symmetric PSD numerator matrix `A` and a symmetric PD
//!   denominator matrix `B` ([`build_sgep`]).
//! * [`SfdaDataset`] — a synthetic four-class Gaussian classification
//!   dataset with block-autoregressive covariance, together with its
//!   between-class and within-class scatter matrices ([`gen_sfda`]);
//!   discriminant directions for it are SGEP solutions.
//! * [`CriticalInstanceBundle`] — diagonal trace-ratio instances built
//!   around a certified critical point that is *not* a stationary point of
//!   the stronger per-piece test, produced by solving a nonnegative
//!   least-squares certificate ([`gen_critical_instance`]).
//!
//! All generators are deterministic functions of their seed, and the bundles
//! they return are immutable. Instances round-trip through a small binary
//! container format and export to CSV for inspection (see [`io`]).

mod critical;
pub mod io;
mod nnls;
mod sfda;
mod sgep;

pub use critical::{gen_critical_instance, CriticalInstanceBundle};
pub use nnls::nnls_mixed_solve;
pub use sfda::{gen_sfda, nearest_centroid_accuracy, SfdaDataset};
pub use sgep::{build_sgep, random_sgep, SgepInstance, TraceQuadratic};

use nalgebra::DMatrix;

/// Fraction of entries of `x` counted as zero at the given relative
/// threshold: entry `x_ij` is a zero when `|x_ij| < threshold * max|x|`.
///
/// An all-zero matrix is fully sparse (fraction 1). The shipped reports use
/// [`crate::tol::SPARSITY_SCALE`] as the threshold.
pub fn sparsity_fraction(x: &DMatrix<f64>, threshold: f64) -> f64 {
    let max_abs = x.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    if max_abs == 0.0 {
        return 1.0;
    }
    let cut = threshold * max_abs;
    let zeros = x.iter().filter(|e| e.abs() < cut).count();
    zeros as f64 / (x.nrows() * x.ncols()) as f64
}
