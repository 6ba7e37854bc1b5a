//! The Stiefel manifold `St(n, p) = { X ∈ R^{n×p} : XᵀX = I_p }` and the
//! operations the solvers need on it.
//!
//! The tangent space at `X` is `T_X = { V : XᵀV + VᵀX = 0 }`; its orthogonal
//! complement (the normal space) is `{ X S : S symmetric }`. Projection onto
//! the tangent space is
//!
//! ```text
//!     P_X(W) = W - X sym(XᵀW),       sym(M) = (M + Mᵀ) / 2,
//! ```
//!
//! and points are moved along tangent directions with the polar retraction
//!
//! ```text
//!     Retr_X(V) = UWᵀ   where   X + V = U Σ Wᵀ  (thin SVD),
//! ```
//!
//! which is the metric projection of `X + V` onto the manifold and agrees
//! with `X + V` to second order in `V`.
//!
//! The linear map `A_X(V) = XᵀV + VᵀX` expresses the tangency constraint;
//! its adjoint `A*_X(Λ) = 2XΛ` (for symmetric `Λ`) is what the dual
//! subproblem solvers iterate on. For feasible `X` the composition satisfies
//! `A_X(A*_X(Λ)) = 4Λ` on symmetric matrices, a fact the inner solvers rely
//! on for their step sizes.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tol;

/// The Stiefel manifold of `n x p` matrices with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stiefel {
    n: usize,
    p: usize,
}

/// A point on a Stiefel manifold. Construction goes through
/// [`Stiefel::point`], which verifies feasibility, so holding a
/// `ManifoldPoint` is a certificate that `XᵀX = I` held (to tolerance) at
/// construction time.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    data: DMatrix<f64>,
}

/// A tangent vector together with the point it is tangent at. Produced by
/// [`Stiefel::tangent_project`] and by the subproblem solvers; scaling
/// preserves tangency, so `scaled` is the only mutation offered.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    data: DMatrix<f64>,
    base: ManifoldPoint,
}

/// Symmetric part `(M + Mᵀ)/2`.
pub(crate) fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl Stiefel {
    /// A Stiefel manifold `St(n, p)`. Requires `1 <= p <= n`.
    pub fn new(n: usize, p: usize) -> Result<Self> {
        if p == 0 || n < p {
            return Err(Error::dims(format!(
                "St(n, p) requires 1 <= p <= n, got n = {n}, p = {p}"
            )));
        }
        Ok(Stiefel { n, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of entries of an ambient matrix, `n * p`.
    pub fn ambient_dim(&self) -> usize {
        self.n * self.p
    }

    /// `||XᵀX - I||_F`, the feasibility defect of an arbitrary matrix.
    pub fn feasibility_defect(&self, m: &DMatrix<f64>) -> f64 {
        let mut gram = m.tr_mul(m);
        for i in 0..self.p {
            gram[(i, i)] -= 1.0;
        }
        gram.norm()
    }

    fn check_shape(&self, m: &DMatrix<f64>, what: &str) -> Result<()> {
        if m.nrows() != self.n || m.ncols() != self.p {
            return Err(Error::dims(format!(
                "{what} must be {}x{}, got {}x{}",
                self.n,
                self.p,
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(())
    }

    /// Wrap a matrix as a manifold point, verifying `||XᵀX - I||_F` is within
    /// the feasibility tolerance.
    pub fn point(&self, data: DMatrix<f64>) -> Result<ManifoldPoint> {
        self.check_shape(&data, "point")?;
        let defect = self.feasibility_defect(&data);
        if !defect.is_finite() {
            return Err(Error::NonFinite { context: "manifold point data".into() });
        }
        if defect > tol::FEASIBILITY {
            return Err(Error::OffManifold { defect, tolerance: tol::FEASIBILITY });
        }
        Ok(ManifoldPoint { data })
    }

    /// Wrap a matrix that is known feasible (e.g. fresh output of a polar
    /// factorization). Debug builds still verify.
    pub fn point_unchecked(&self, data: DMatrix<f64>) -> ManifoldPoint {
        debug_assert!(
            self.feasibility_defect(&data) <= 10.0 * tol::FEASIBILITY,
            "point_unchecked received an infeasible matrix"
        );
        ManifoldPoint { data }
    }

    /// Orthogonal projection of an ambient matrix onto the tangent space at
    /// `x`: `W - X sym(XᵀW)`.
    ///
    /// For `St(2, 1)` at `x = (1, 0)ᵀ` the tangent space is the vertical
    /// axis, so `w = (3, 4)ᵀ` projects to `(0, 4)ᵀ`.
    pub fn tangent_project(&self, x: &ManifoldPoint, w: &DMatrix<f64>) -> Result<TangentVector> {
        self.check_shape(w, "ambient vector")?;
        let s = sym_part(&x.data.tr_mul(w));
        let data = w - &x.data * s;
        Ok(TangentVector { data, base: x.clone() })
    }

    /// The tangency constraint map `A_X(V) = XᵀV + VᵀX` (a symmetric `p x p`
    /// matrix; zero exactly when `V` is tangent at `X`).
    pub fn normal_constraint_apply(&self, x: &ManifoldPoint, v: &DMatrix<f64>) -> DMatrix<f64> {
        let m = x.data.tr_mul(v);
        &m + m.transpose()
    }

    /// Adjoint of the constraint map, `A*_X(Λ) = 2XΛ` for symmetric `Λ`.
    ///
    /// A multiplier with asymmetry above [`tol::MULTIPLIER_SYMMETRY_WARN`]
    /// is symmetrized and a warning is logged; the asymmetric part of `Λ`
    /// is invisible to `A_X` and keeping it would silently corrupt dual
    /// iterations.
    pub fn normal_constraint_adjoint(
        &self,
        x: &ManifoldPoint,
        lambda: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let asym = (lambda - lambda.transpose()).norm();
        if asym > tol::MULTIPLIER_SYMMETRY_WARN {
            log::warn!(
                "normal_constraint_adjoint: multiplier asymmetry {asym:.3e}; symmetrizing"
            );
        }
        let s = sym_part(lambda);
        &x.data * s * 2.0
    }

    /// Polar factor of an `n x p` matrix: the orthonormal `Q = U Wᵀ` from the
    /// thin SVD `M = U Σ Wᵀ`, i.e. the nearest matrix with orthonormal
    /// columns. Fails when the smallest singular value is below
    /// [`tol::POLAR_SIGMA_MIN`], where the factor stops being well defined.
    pub fn polar_factor(&self, m: &DMatrix<f64>) -> Result<ManifoldPoint> {
        self.check_shape(m, "matrix to factor")?;
        let svd = m.clone().svd(true, true);
        let sigma_min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        if !sigma_min.is_finite() || sigma_min < tol::POLAR_SIGMA_MIN {
            return Err(Error::SingularPolarFactor {
                sigma_min,
                limit: tol::POLAR_SIGMA_MIN,
            });
        }
        let u = svd.u.expect("thin SVD with u requested");
        let v_t = svd.v_t.expect("thin SVD with v_t requested");
        Ok(self.point_unchecked(u * v_t))
    }

    /// Polar retraction `Retr_X(V)` for a tangent vector `V` at `X`.
    ///
    /// Since `(X + V)ᵀ(X + V) = I + VᵀV ⪰ I` for tangent `V`, the factor is
    /// always well defined in exact arithmetic. On `St(2, 1)` with
    /// `x = (1, 0)ᵀ`, `v = (0, s)ᵀ`, the retraction is
    /// `(1, s)ᵀ / sqrt(1 + s²)`.
    pub fn retract_polar(&self, v: &TangentVector) -> Result<ManifoldPoint> {
        self.polar_factor(&(&v.base.data + &v.data))
    }

    /// `Retr_X(alpha * V)` without materializing the scaled tangent vector.
    pub fn retract_polar_scaled(&self, v: &TangentVector, alpha: f64) -> Result<ManifoldPoint> {
        self.polar_factor(&(&v.base.data + &v.data * alpha))
    }

    /// Project a drifted iterate back onto the manifold (polar projection).
    pub fn re_orthonormalize(&self, x: &ManifoldPoint) -> Result<ManifoldPoint> {
        self.polar_factor(&x.data)
    }

    /// Draw a uniformly random point: fill with standard normals, take the
    /// thin QR factor, and fix signs so the `R` diagonal is nonnegative.
    /// The draw order is fixed (column-major) so a given RNG state always
    /// produces the same point on every platform.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> ManifoldPoint {
        loop {
            let mut m = DMatrix::<f64>::zeros(self.n, self.p);
            for j in 0..self.p {
                for i in 0..self.n {
                    m[(i, j)] = rng.sample(StandardNormal);
                }
            }
            let qr = m.qr();
            let r = qr.r();
            let mut q = qr.q();
            // A zero pivot means the Gaussian draw was (numerically) rank
            // deficient — probability zero, but redraw rather than emit a
            // bogus point.
            let mut degenerate = false;
            for j in 0..self.p {
                let rjj = r[(j, j)];
                if rjj.abs() < 1e-12 {
                    degenerate = true;
                    break;
                }
                if rjj < 0.0 {
                    for i in 0..self.n {
                        q[(i, j)] = -q[(i, j)];
                    }
                }
            }
            if !degenerate {
                return self.point_unchecked(q);
            }
        }
    }

    /// [`Stiefel::random_point`] with a one-shot seeded generator.
    pub fn random_point_seeded(&self, seed: u64) -> ManifoldPoint {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.random_point(&mut rng)
    }

    /// Wrap an ambient matrix as a tangent vector at `x`, verifying the
    /// tangency constraint `XᵀV + VᵀX = 0` numerically.
    pub fn tangent_vector(&self, x: &ManifoldPoint, data: DMatrix<f64>) -> Result<TangentVector> {
        self.check_shape(&data, "tangent data")?;
        let defect = self.normal_constraint_apply(x, &data).norm();
        let scale = 1.0_f64.max(data.norm());
        if defect > 1e-8 * scale {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "matrix is not tangent at the given point: ||XᵀV + VᵀX||_F = {defect:.3e}"
                ),
            });
        }
        Ok(TangentVector { data, base: x.clone() })
    }
}

impl ManifoldPoint {
    /// The underlying `n x p` matrix.
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }
}

impl TangentVector {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// The point this vector is tangent at.
    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.data.norm_squared()
    }

    /// `alpha * V`, still tangent at the same base point.
    pub fn scaled(&self, alpha: f64) -> TangentVector {
        TangentVector { data: &self.data * alpha, base: self.base.clone() }
    }

    /// `||XᵀV + VᵀX||_F` — how far this vector is from exact tangency.
    pub fn tangency_defect(&self) -> f64 {
        let m = self.base.data.tr_mul(&self.data);
        (&m + m.transpose()).norm()
    }
}
