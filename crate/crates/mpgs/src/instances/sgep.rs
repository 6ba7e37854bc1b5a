//! Sparse generalized trace-ratio instances: the matrix pair `(A, B)`, the
//! penalty parameters, and the wiring that turns them into a
//! [`CompositeProblem`].

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifolds::Stiefel;
use crate::objective::{CompositeProblem, H2Term, ProxTerm, SmoothTerm, SqrtWeaklyConvex, TopKNorm};
use crate::solvers::stepsize_adaptive_fractional;
use crate::tol;

/// The quadratic form `x ↦ tr(XᵀMX)` for a fixed symmetric `M`, with
/// gradient `2MX`. Serves as both the numerator and the denominator of the
/// trace-ratio objective.
#[derive(Clone)]
pub struct TraceQuadratic {
    m: Arc<DMatrix<f64>>,
}

impl TraceQuadratic {
    /// `M` must be square and symmetric; the instance builders validate
    /// this before constructing the term.
    pub fn new(m: Arc<DMatrix<f64>>) -> TraceQuadratic {
        debug_assert_eq!(m.nrows(), m.ncols());
        TraceQuadratic { m }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    fn trace_form(&self, x: &DMatrix<f64>) -> f64 {
        // tr(XᵀMX) = Σ_ij X_ij (MX)_ij, without forming the p×p product.
        let mx = &*self.m * x;
        x.dot(&mx)
    }
}

impl SmoothTerm for TraceQuadratic {
    fn value(&self, x: &DMatrix<f64>) -> f64 {
        self.trace_form(x)
    }

    fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        (&*self.m * x) * 2.0
    }
}

impl SqrtWeaklyConvex for TraceQuadratic {
    fn value(&self, x: &DMatrix<f64>) -> f64 {
        self.trace_form(x)
    }

    fn subgradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        // For PSD M, tr(XᵀMX) = 0 forces MX = 0; return the exact zero the
        // trait contract requires rather than rounding noise.
        if self.trace_form(x) <= 0.0 {
            DMatrix::zeros(x.nrows(), x.ncols())
        } else {
            (&*self.m * x) * 2.0
        }
    }

    fn modulus(&self) -> f64 {
        // sqrt(tr(XᵀMX)) = ‖M^{1/2}X‖_F is convex, so the weak-convexity
        // modulus is zero.
        0.0
    }
}

/// A validated sparse generalized trace-ratio instance:
/// `min λ‖X‖₁ − λ‖X‖₍K₎ − tr(XᵀAX)/tr(XᵀBX)` over the Stiefel manifold
/// `St(n, p)`, with `A` symmetric PSD and `B` symmetric PD. `K = None`
/// drops the top-K term (plain ℓ1 penalty); `λ = 0` drops the penalty
/// entirely (pure trace-ratio problem).
#[derive(Clone)]
pub struct SgepInstance {
    a: Arc<DMatrix<f64>>,
    b: Arc<DMatrix<f64>>,
    lambda: f64,
    topk: Option<usize>,
    p: usize,
    /// Cached spectral norm of `B`, used by the adaptive step-size rule.
    specnorm_b: f64,
}

/// Largest asymmetry `|M_ij − M_ji|` of a square matrix.
fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn max_abs_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()))
}

/// Smallest and largest eigenvalue of a symmetric matrix, by a dense
/// symmetric eigendecomposition.
fn sym_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &ev in eig.eigenvalues.iter() {
        lo = lo.min(ev);
        hi = hi.max(ev);
    }
    (lo, hi)
}

impl SgepInstance {
    /// Validates and stores an instance. `A` and `B` must be square of the
    /// same size, symmetric to 1e-12 (relative to their largest entry),
    /// with `λ_min(A) ≥ −1e-10` and `λ_min(B) > 0` under a dense
    /// eigendecomposition check; `λ ≥ 0`; `K`, when present, must lie in
    /// `1..=n·p`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        lambda: f64,
        topk: Option<usize>,
        p: usize,
    ) -> Result<SgepInstance> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || b.ncols() != n {
            return Err(Error::dims(format!(
                "matrix pair must be square and same size, got {}x{} and {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        // Validates 1 <= p <= n as a side effect.
        Stiefel::new(n, p)?;
        if a.iter().any(|e| !e.is_finite()) || b.iter().any(|e| !e.is_finite()) {
            return Err(Error::instance("matrix pair contains non-finite entries"));
        }
        let sym_tol_a = 1e-12 * max_abs_entry(&a).max(1.0);
        let defect_a = symmetry_defect(&a);
        if defect_a > sym_tol_a {
            return Err(Error::instance(format!(
                "numerator matrix is asymmetric: defect {defect_a:.3e} exceeds {sym_tol_a:.3e}"
            )));
        }
        let sym_tol_b = 1e-12 * max_abs_entry(&b).max(1.0);
        let defect_b = symmetry_defect(&b);
        if defect_b > sym_tol_b {
            return Err(Error::instance(format!(
                "denominator matrix is asymmetric: defect {defect_b:.3e} exceeds {sym_tol_b:.3e}"
            )));
        }
        let (b_min, b_max) = sym_eigen_range(&b);
        if !(b_min > 0.0) {
            return Err(Error::instance(format!(
                "denominator matrix must be positive definite; smallest eigenvalue {b_min:.3e}"
            )));
        }
        let (a_min, _) = sym_eigen_range(&a);
        if a_min < -1e-10 {
            return Err(Error::instance(format!(
                "numerator matrix must be positive semidefinite; smallest eigenvalue {a_min:.3e}"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::instance(format!(
                "penalty weight must be finite and nonnegative, got {lambda}"
            )));
        }
        if let Some(k) = topk {
            if k == 0 || k > n * p {
                return Err(Error::instance(format!(
                    "top-K count {k} out of range 1..={} for a {n}x{p} variable",
                    n * p
                )));
            }
        }
        Ok(SgepInstance { a: Arc::new(a), b: Arc::new(b), lambda, topk, p, specnorm_b: b_max })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn topk(&self) -> Option<usize> {
        self.topk
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Spectral norm of the denominator matrix (largest eigenvalue; the
    /// matrix is PD).
    pub fn specnorm_b(&self) -> f64 {
        self.specnorm_b
    }

    /// Wires the instance into a ready-to-solve problem: `h1 = λ‖·‖₁`,
    /// `h2 = λ‖·‖₍K₎` (each omitted when inactive), `f = tr(XᵀAX)`,
    /// `g = tr(XᵀBX)`, no extra smooth term, and the adaptive fractional
    /// step-size hint `t(X) = tr(XᵀBX)² / (tr(XᵀAX)·‖B‖₂)`.
    pub fn problem(&self) -> CompositeProblem {
        let manifold = Stiefel::new(self.n(), self.p).expect("dimensions validated on construction");
        let f = Arc::new(TraceQuadratic::new(self.a.clone()));
        let g = Arc::new(TraceQuadratic::new(self.b.clone()));
        let mut problem = CompositeProblem::new(manifold, f, g);
        if self.lambda > 0.0 {
            problem = problem
                .with_h1(ProxTerm::l1(self.lambda).expect("weight validated on construction"));
            if let Some(k) = self.topk {
                let norm = TopKNorm::new(k, self.lambda).expect("count validated on construction");
                problem = problem.with_h2(H2Term::FiniteMax(Arc::new(norm)));
            }
        }
        let a = self.a.clone();
        let b = self.b.clone();
        let specnorm_b = self.specnorm_b;
        problem.with_stepsize_hint(Arc::new(move |x| {
            stepsize_adaptive_fractional(
                x.as_matrix(),
                &a,
                &b,
                specnorm_b,
                tol::STEPSIZE_LO,
                tol::STEPSIZE_HI,
            )
        }))
    }
}

impl std::fmt::Debug for SgepInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SgepInstance")
            .field("n", &self.n())
            .field("p", &self.p)
            .field("lambda", &self.lambda)
            .field("topk", &self.topk)
            .field("specnorm_b", &self.specnorm_b)
            .finish()
    }
}

/// Validates the matrix pair and penalty parameters and returns the wired
/// problem. Convenience wrapper around [`SgepInstance::new`] +
/// [`SgepInstance::problem`].
pub fn build_sgep(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    lambda: f64,
    topk: Option<usize>,
    p: usize,
) -> Result<CompositeProblem> {
    Ok(SgepInstance::new(a, b, lambda, topk, p)?.problem())
}

/// A random dense instance: `A = GᵀG/n` (PSD, almost surely PD) and
/// `B = HᵀH/n + I/2` (PD) with independent standard Gaussian `G`, `H`.
/// Deterministic per seed.
pub fn random_sgep(
    n: usize,
    p: usize,
    lambda: f64,
    topk: Option<usize>,
    seed: u64,
) -> Result<SgepInstance> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut gaussian = |rows: usize, cols: usize| -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    };
    let g = gaussian(n, n);
    let h = gaussian(n, n);
    let mut a = g.tr_mul(&g) / n as f64;
    let mut b = h.tr_mul(&h) / n as f64;
    // Gram products are symmetric up to rounding; make it exact so the
    // validation tolerances never flake.
    a = (&a + a.transpose()) * 0.5;
    b = (&b + b.transpose()) * 0.5;
    for i in 0..n {
        b[(i, i)] += 0.5;
    }
    SgepInstance::new(a, b, lambda, topk, p)
}
