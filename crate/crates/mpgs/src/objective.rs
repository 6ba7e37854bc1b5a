//! Objective terms and their composition
//! `F(X) = h1(X) - h2(X) + r(X) - f(X)/g(X)`.
//!
//! The solvers only touch terms through narrow interfaces: `h1` through its
//! proximal map, `h2` through one subgradient (or, for finite-max terms,
//! through the list of nearly-active pieces), `r` and `g` through gradients,
//! and `f` through a subgradient that must vanish when `f` does. All the
//! model-specific structure (trace quadratics, scatter matrices, ...) lives
//! in [`crate::instances`]; this module owns the generic pieces every model
//! shares, most importantly the top-K magnitude norm
//!
//! ```text
//!     |||X|||_K = max { Σ_{l ∈ S} σ_l X_l : |S| = K, σ_l ∈ {±1} }
//! ```
//!
//! whose linear pieces drive the competing-candidate solver.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifolds::{ManifoldPoint, Stiefel};

/// Convex term accessed through its (scaled) proximal map.
///
/// `prox(z, t)` must return `argmin_u  t·h(u) + ||u - z||²_F / 2` for
/// `t >= 0`; in particular `prox(z, 0) = z`.
pub trait ProxOracle: Send + Sync {
    fn value(&self, x: &DMatrix<f64>) -> f64;
    fn prox(&self, z: &DMatrix<f64>, t: f64) -> DMatrix<f64>;
    /// A Lipschitz constant of the term w.r.t. the Frobenius norm on
    /// `n x p` matrices (informational; not used by the algorithms).
    fn lipschitz_bound(&self, n: usize, p: usize) -> f64;
}

/// Convex term accessed through one arbitrary-but-deterministic subgradient.
pub trait SubgradientConvex: Send + Sync {
    fn value(&self, x: &DMatrix<f64>) -> f64;
    /// Some element of the subdifferential at `x`. Must be deterministic:
    /// the same `x` always yields the same element.
    fn subgradient(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
}

/// A piece of a finite-max convex function, evaluated at a query point:
/// the piece's value there and its gradient (pieces are smooth, so the
/// gradient is unique).
#[derive(Debug, Clone)]
pub struct ActivePiece {
    pub value: f64,
    pub gradient: DMatrix<f64>,
}

/// Convex term of the form `h(x) = max_i ψ_i(x)` with finitely many smooth
/// pieces `ψ_i`.
pub trait FiniteMaxConvex: SubgradientConvex {
    /// The pieces whose value at `x` is within `eta` of the max, the
    /// exactly-maximal piece first, in a deterministic order. Fails with
    /// [`Error::PieceCapExceeded`] when more than `cap` pieces qualify.
    fn active_pieces(&self, x: &DMatrix<f64>, eta: f64, cap: usize) -> Result<Vec<ActivePiece>>;
}

/// Continuously differentiable term.
pub trait SmoothTerm: Send + Sync {
    fn value(&self, x: &DMatrix<f64>) -> f64;
    fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
}

/// Numerator `f` of the fractional term: `f >= 0`, `sqrt(f)` weakly convex.
/// The subgradient contract is the one the convergence theory needs:
/// wherever `f(x) = 0` the returned matrix is exactly zero.
pub trait SqrtWeaklyConvex: Send + Sync {
    fn value(&self, x: &DMatrix<f64>) -> f64;
    fn subgradient(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    /// Weak-convexity modulus of `sqrt(f)` (informational).
    fn modulus(&self) -> f64;
}

/// The `h1` slot: convex, prox-friendly. The two closed forms the solvers
/// specialize on get their own variants so dispatch can pick the right
/// subproblem method.
#[derive(Clone)]
pub enum ProxTerm {
    /// `h1 = 0`.
    Zero,
    /// `h1 = weight * ||X||_1` (entrywise), `weight >= 0`.
    L1 { weight: f64 },
    /// Anything else with a prox oracle.
    Custom(Arc<dyn ProxOracle>),
}

impl std::fmt::Debug for ProxTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProxTerm::Zero => write!(f, "Zero"),
            ProxTerm::L1 { weight } => write!(f, "L1 {{ weight: {weight} }}"),
            ProxTerm::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl ProxTerm {
    /// `weight * ||.||_1`; fails for negative weight.
    pub fn l1(weight: f64) -> Result<ProxTerm> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::InvalidConfig {
                reason: format!("l1 weight must be finite and nonnegative, got {weight}"),
            });
        }
        Ok(ProxTerm::L1 { weight })
    }

    pub fn value(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            ProxTerm::Zero => 0.0,
            ProxTerm::L1 { weight } => l1_value(x, *weight),
            ProxTerm::Custom(h) => h.value(x),
        }
    }

    /// `argmin_u  t·h1(u) + ||u - z||² / 2`. Fails for `t < 0`.
    pub fn prox(&self, z: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidProxScale {
                scale: t,
                reason: "prox parameter must be finite and nonnegative".into(),
            });
        }
        Ok(match self {
            ProxTerm::Zero => z.clone(),
            ProxTerm::L1 { weight } => l1_prox(z, t * weight)?,
            ProxTerm::Custom(h) => h.prox(z, t),
        })
    }

    pub fn lipschitz_bound(&self, n: usize, p: usize) -> f64 {
        match self {
            ProxTerm::Zero => 0.0,
            // |w||a||_1 - w||b||_1| <= w ||a-b||_1 <= w sqrt(np) ||a-b||_F
            ProxTerm::L1 { weight } => weight * ((n * p) as f64).sqrt(),
            ProxTerm::Custom(h) => h.lipschitz_bound(n, p),
        }
    }

    pub fn describe(&self) -> String {
        format!("{self:?}")
    }
}

/// The `h2` slot: convex, accessed through subgradients. The finite-max
/// variant additionally exposes its nearly-active pieces, which is what the
/// competing-candidate solver iterates over.
#[derive(Clone)]
pub enum H2Term {
    Zero,
    Generic(Arc<dyn SubgradientConvex>),
    FiniteMax(Arc<dyn FiniteMaxConvex>),
}

impl std::fmt::Debug for H2Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            H2Term::Zero => write!(f, "Zero"),
            H2Term::Generic(_) => write!(f, "Generic(..)"),
            H2Term::FiniteMax(_) => write!(f, "FiniteMax(..)"),
        }
    }
}

impl H2Term {
    pub fn value(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            H2Term::Zero => 0.0,
            H2Term::Generic(h) => h.value(x),
            H2Term::FiniteMax(h) => h.value(x),
        }
    }

    pub fn subgradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            H2Term::Zero => DMatrix::zeros(x.nrows(), x.ncols()),
            H2Term::Generic(h) => h.subgradient(x),
            H2Term::FiniteMax(h) => h.subgradient(x),
        }
    }

    pub fn is_finite_max(&self) -> bool {
        matches!(self, H2Term::FiniteMax(_))
    }

    /// Nearly-active pieces at `x`; errors unless the term is a finite max.
    pub fn active_pieces(
        &self,
        x: &DMatrix<f64>,
        eta: f64,
        cap: usize,
    ) -> Result<Vec<ActivePiece>> {
        match self {
            H2Term::FiniteMax(h) => h.active_pieces(x, eta, cap),
            _ => Err(Error::NotFiniteMax { operation: "active_pieces" }),
        }
    }
}

/// Values of the individual terms at one point, plus their composition.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveTerms {
    pub h1: f64,
    pub h2: f64,
    pub r: f64,
    pub f: f64,
    pub g: f64,
    /// `h1 - h2 + r - f/g`.
    pub total: f64,
}

/// Step-size suggestion callback attached by instance builders; given the
/// current iterate, returns an (unclamped) step size.
pub type StepsizeHint = Arc<dyn Fn(&ManifoldPoint) -> f64 + Send + Sync>;

/// The full minimization problem `min_{X ∈ St(n,p)} h1 - h2 + r - f/g`.
#[derive(Clone)]
pub struct CompositeProblem {
    manifold: Stiefel,
    h1: ProxTerm,
    h2: H2Term,
    r: Option<Arc<dyn SmoothTerm>>,
    f: Arc<dyn SqrtWeaklyConvex>,
    g: Arc<dyn SmoothTerm>,
    stepsize_hint: Option<StepsizeHint>,
}

impl std::fmt::Debug for CompositeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompositeProblem")
            .field("manifold", &self.manifold)
            .field("h1", &self.h1)
            .field("h2", &self.h2)
            .field("has_r", &self.r.is_some())
            .field("has_stepsize_hint", &self.stepsize_hint.is_some())
            .finish()
    }
}

impl CompositeProblem {
    /// A problem with only the fractional part, `F = -f/g`; add the other
    /// terms with the `with_*` builders.
    pub fn new(
        manifold: Stiefel,
        f: Arc<dyn SqrtWeaklyConvex>,
        g: Arc<dyn SmoothTerm>,
    ) -> CompositeProblem {
        CompositeProblem { manifold, h1: ProxTerm::Zero, h2: H2Term::Zero, r: None, f, g, stepsize_hint: None }
    }

    pub fn with_h1(mut self, h1: ProxTerm) -> CompositeProblem {
        self.h1 = h1;
        self
    }

    pub fn with_h2(mut self, h2: H2Term) -> CompositeProblem {
        self.h2 = h2;
        self
    }

    pub fn with_r(mut self, r: Arc<dyn SmoothTerm>) -> CompositeProblem {
        self.r = Some(r);
        self
    }

    pub fn with_stepsize_hint(mut self, hint: StepsizeHint) -> CompositeProblem {
        self.stepsize_hint = Some(hint);
        self
    }

    pub fn manifold(&self) -> &Stiefel {
        &self.manifold
    }

    pub fn h1(&self) -> &ProxTerm {
        &self.h1
    }

    pub fn h2(&self) -> &H2Term {
        &self.h2
    }

    pub fn f_term(&self) -> &Arc<dyn SqrtWeaklyConvex> {
        &self.f
    }

    pub fn g_term(&self) -> &Arc<dyn SmoothTerm> {
        &self.g
    }

    /// Per-term values and the composed objective. Fails when `g(x) <= 0`
    /// (the fraction is undefined there) or any term is non-finite.
    pub fn eval_terms(&self, x: &ManifoldPoint) -> Result<ObjectiveTerms> {
        let m = x.as_matrix();
        let g = self.g.value(m);
        if !g.is_finite() || g <= 0.0 {
            return Err(Error::NonpositiveDenominator { value: g });
        }
        let terms = ObjectiveTerms {
            h1: self.h1.value(m),
            h2: self.h2.value(m),
            r: self.r.as_ref().map_or(0.0, |r| r.value(m)),
            f: self.f.value(m),
            g,
            total: 0.0,
        };
        let total = terms.h1 - terms.h2 + terms.r - terms.f / terms.g;
        if !total.is_finite() {
            return Err(Error::NonFinite { context: "objective value".into() });
        }
        Ok(ObjectiveTerms { total, ..terms })
    }

    /// The objective `F(x)`.
    pub fn objective_value(&self, x: &ManifoldPoint) -> Result<f64> {
        Ok(self.eval_terms(x)?.total)
    }

    /// The vector `w` that the tangent subproblem linearizes around:
    ///
    /// ```text
    ///     w = ∇r(x) + f(x)/g(x)² · ∇g(x) - y/g(x) - z
    /// ```
    ///
    /// where `y ∈ ∂f(x)` and `z` is the chosen (sub)gradient of `h2`.
    pub fn linearization_vector(
        &self,
        x: &ManifoldPoint,
        y: &DMatrix<f64>,
        z: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let m = x.as_matrix();
        let g = self.g.value(m);
        if !g.is_finite() || g <= 0.0 {
            return Err(Error::NonpositiveDenominator { value: g });
        }
        let f = self.f.value(m);
        let mut w = self.g.gradient(m) * (f / (g * g));
        w -= y / g;
        w -= z;
        if let Some(r) = &self.r {
            w += r.gradient(m);
        }
        if !w.iter().all(|e| e.is_finite()) {
            return Err(Error::NonFinite { context: "linearization vector".into() });
        }
        Ok(w)
    }

    /// Evaluate the attached adaptive step-size hint, if any.
    pub fn stepsize_hint_at(&self, x: &ManifoldPoint) -> Option<f64> {
        self.stepsize_hint.as_ref().map(|h| h(x))
    }
}

// ---------------------------------------------------------------------------
// Entrywise l1 norm.
// ---------------------------------------------------------------------------

/// `weight * Σ |X_ij|`.
pub fn l1_value(x: &DMatrix<f64>, weight: f64) -> f64 {
    weight * x.iter().map(|e| e.abs()).sum::<f64>()
}

/// Soft threshold: `argmin_u  s·||u||_1 + ||u - z||²/2`, entrywise
/// `sign(z) * max(|z| - s, 0)`. Fails for `s < 0`; `s = 0` is the identity.
pub fn l1_prox(z: &DMatrix<f64>, s: f64) -> Result<DMatrix<f64>> {
    if !s.is_finite() || s < 0.0 {
        return Err(Error::InvalidProxScale {
            scale: s,
            reason: "soft-threshold level must be finite and nonnegative".into(),
        });
    }
    Ok(z.map(|e| {
        if e > s {
            e - s
        } else if e < -s {
            e + s
        } else {
            0.0
        }
    }))
}

// ---------------------------------------------------------------------------
// Top-K magnitude norm: value, subgradient, active pieces.
// ---------------------------------------------------------------------------

/// One linear piece of the top-K norm: a size-K set of entry positions
/// (column-major linear indices into the matrix) with the signs the piece
/// uses there. The piece function is `ψ(Y) = weight · Σ_l signs[l] · Y[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKPiece {
    /// Column-major linear indices, ascending.
    pub indices: Vec<usize>,
    /// `+1.0` or `-1.0` per index (zero reference entries get `+1.0`).
    pub signs: Vec<f64>,
    /// How far the piece's value at the reference point is below the max.
    pub deficit: f64,
}

impl TopKPiece {
    /// `ψ(Y)` (including the weight).
    pub fn value_at(&self, y: &DMatrix<f64>, weight: f64) -> f64 {
        let flat = y.as_slice();
        weight
            * self
                .indices
                .iter()
                .zip(&self.signs)
                .map(|(&l, &s)| s * flat[l])
                .sum::<f64>()
    }

    /// `∇ψ` as a dense matrix (constant in `Y`).
    pub fn gradient(&self, nrows: usize, ncols: usize, weight: f64) -> DMatrix<f64> {
        let mut grad = DMatrix::zeros(nrows, ncols);
        {
            let flat = grad.as_mut_slice();
            for (&l, &s) in self.indices.iter().zip(&self.signs) {
                flat[l] = weight * s;
            }
        }
        grad
    }
}

fn check_topk_args(x: &DMatrix<f64>, k: usize) -> Result<()> {
    let np = x.nrows() * x.ncols();
    if k == 0 || k > np {
        return Err(Error::InvalidConfig {
            reason: format!("top-K order must satisfy 1 <= K <= {np}, got {k}"),
        });
    }
    if !x.iter().all(|e| e.is_finite()) {
        return Err(Error::NonFinite { context: "top-K input".into() });
    }
    Ok(())
}

/// Entry positions sorted by magnitude descending, ties broken by ascending
/// linear index — the canonical order every top-K operation uses.
fn sorted_positions(x: &DMatrix<f64>) -> Vec<usize> {
    let flat = x.as_slice();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        flat[b]
            .abs()
            .partial_cmp(&flat[a].abs())
            .expect("finite magnitudes")
            .then(a.cmp(&b))
    });
    order
}

/// `weight` times the sum of the `k` largest entry magnitudes.
pub fn topk_value(x: &DMatrix<f64>, k: usize, weight: f64) -> Result<f64> {
    check_topk_args(x, k)?;
    let flat = x.as_slice();
    let order = sorted_positions(x);
    Ok(weight * order[..k].iter().map(|&l| flat[l].abs()).sum::<f64>())
}

/// The canonical subgradient of the top-K norm: `weight * sign(X_l)` on the
/// `k` positions of largest magnitude (ties broken toward the lowest
/// column-major index), zero elsewhere. A selected entry that is exactly
/// zero contributes zero, which is a valid subgradient choice.
pub fn topk_subgradient(x: &DMatrix<f64>, k: usize, weight: f64) -> Result<DMatrix<f64>> {
    check_topk_args(x, k)?;
    let order = sorted_positions(x);
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    {
        let flat_x = x.as_slice();
        let flat_g = grad.as_mut_slice();
        for &l in &order[..k] {
            flat_g[l] = if flat_x[l] > 0.0 {
                weight
            } else if flat_x[l] < 0.0 {
                -weight
            } else {
                0.0
            };
        }
    }
    Ok(grad)
}

/// All linear pieces of the top-K norm whose value at `x` is within `eta`
/// of the norm itself: index sets `S` with
/// `weight · (Σ_{top K} |x| - Σ_{l∈S} |x_l|) <= eta`.
///
/// The exactly-maximal piece (the canonical top-K selection) comes first;
/// the rest follow ordered by deficit, then lexicographically. Zero entries
/// selected by a piece get sign `+1`. More than `cap` qualifying pieces is
/// an error carrying the first `cap` found.
pub fn topk_active_pieces(
    x: &DMatrix<f64>,
    k: usize,
    weight: f64,
    eta: f64,
    cap: usize,
) -> Result<Vec<TopKPiece>> {
    check_topk_args(x, k)?;
    if !(weight > 0.0) {
        return Err(Error::InvalidConfig {
            reason: format!("active-piece enumeration requires a positive weight, got {weight}"),
        });
    }
    if eta < 0.0 || cap == 0 {
        return Err(Error::InvalidConfig {
            reason: format!("need eta >= 0 and cap >= 1, got eta = {eta}, cap = {cap}"),
        });
    }
    let flat = x.as_slice();
    let order = sorted_positions(x);
    let mags: Vec<f64> = order.iter().map(|&l| flat[l].abs()).collect();
    let np = mags.len();

    // Prefix sums of the sorted magnitudes: prefix[i] = Σ_{j<i} mags[j].
    let mut prefix = vec![0.0; np + 1];
    for i in 0..np {
        prefix[i + 1] = prefix[i] + mags[i];
    }
    let max_sum = prefix[k];
    // A selection S (positions into the sorted list) is active iff
    // Σ_{i∈S} mags[i] >= max_sum - eta/weight.
    let floor = max_sum - eta / weight;

    // Depth-first enumeration over sorted positions, taking before skipping,
    // so the first emitted piece is the canonical greedy selection. Prune a
    // branch when even taking the largest remaining magnitudes cannot reach
    // the floor.
    let mut found: Vec<(f64, Vec<usize>)> = Vec::new(); // (sum, sorted positions)
    let mut stack_sel: Vec<usize> = Vec::with_capacity(k);
    let mut overflowed = false;
    dfs_pieces(
        &mags,
        &prefix,
        k,
        floor,
        0,
        0.0,
        &mut stack_sel,
        &mut found,
        cap,
        &mut overflowed,
    );

    let mut pieces: Vec<TopKPiece> = found
        .into_iter()
        .map(|(sum, sel)| {
            let mut idx: Vec<usize> = sel.iter().map(|&pos| order[pos]).collect();
            idx.sort_unstable();
            let signs = idx
                .iter()
                .map(|&l| if flat[l] < 0.0 { -1.0 } else { 1.0 })
                .collect();
            TopKPiece { indices: idx, signs, deficit: weight * (max_sum - sum) }
        })
        .collect();
    pieces.sort_by(|a, b| {
        a.deficit
            .partial_cmp(&b.deficit)
            .expect("finite deficits")
            .then_with(|| a.indices.cmp(&b.indices))
    });
    if overflowed {
        pieces.truncate(cap);
        return Err(Error::PieceCapExceeded { cap, partial: pieces });
    }
    Ok(pieces)
}

#[allow(clippy::too_many_arguments)]
fn dfs_pieces(
    mags: &[f64],
    prefix: &[f64],
    k: usize,
    floor: f64,
    pos: usize,
    sum: f64,
    sel: &mut Vec<usize>,
    found: &mut Vec<(f64, Vec<usize>)>,
    cap: usize,
    overflowed: &mut bool,
) {
    if *overflowed {
        return;
    }
    if sel.len() == k {
        if sum >= floor {
            if found.len() == cap {
                *overflowed = true;
                return;
            }
            found.push((sum, sel.clone()));
        }
        return;
    }
    let need = k - sel.len();
    if pos + need > mags.len() {
        return;
    }
    // Best completion takes the `need` largest remaining magnitudes.
    if sum + (prefix[pos + need] - prefix[pos]) < floor {
        return;
    }
    sel.push(pos);
    dfs_pieces(mags, prefix, k, floor, pos + 1, sum + mags[pos], sel, found, cap, overflowed);
    sel.pop();
    dfs_pieces(mags, prefix, k, floor, pos + 1, sum, sel, found, cap, overflowed);
}

/// The top-K magnitude norm as an `h2` term.
#[derive(Debug, Clone)]
pub struct TopKNorm {
    k: usize,
    weight: f64,
}

impl TopKNorm {
    pub fn new(k: usize, weight: f64) -> Result<TopKNorm> {
        if !weight.is_finite() || weight <= 0.0 {
            return Err(Error::InvalidConfig {
                reason: format!("top-K norm weight must be positive, got {weight}"),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig { reason: "top-K order must be >= 1".into() });
        }
        Ok(TopKNorm { k, weight })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

impl SubgradientConvex for TopKNorm {
    fn value(&self, x: &DMatrix<f64>) -> f64 {
        topk_value(x, self.k, self.weight).expect("valid top-K arguments")
    }

    fn subgradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        topk_subgradient(x, self.k, self.weight).expect("valid top-K arguments")
    }
}

impl FiniteMaxConvex for TopKNorm {
    fn active_pieces(&self, x: &DMatrix<f64>, eta: f64, cap: usize) -> Result<Vec<ActivePiece>> {
        let pieces = topk_active_pieces(x, self.k, self.weight, eta, cap)?;
        Ok(pieces
            .iter()
            .map(|piece| ActivePiece {
                value: piece.value_at(x, self.weight),
                gradient: piece.gradient(x.nrows(), x.ncols(), self.weight),
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Moreau envelope.
// ---------------------------------------------------------------------------

/// Gradient of the Moreau envelope of `h1` with parameter `t > 0`:
/// `∇(h1)_t(z) = (z - prox_{t·h1}(z)) / t`, a `1/t`-Lipschitz map.
pub fn moreau_envelope_grad(h1: &ProxTerm, z: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidProxScale {
            scale: t,
            reason: "Moreau envelope parameter must be positive".into(),
        });
    }
    let p = h1.prox(z, t)?;
    Ok((z - p) / t)
}

/// Value of the Moreau envelope `(h1)_t(z) = min_u h1(u) + ||u-z||²/(2t)`.
pub fn moreau_envelope_value(h1: &ProxTerm, z: &DMatrix<f64>, t: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidProxScale {
            scale: t,
            reason: "Moreau envelope parameter must be positive".into(),
        });
    }
    let p = h1.prox(z, t)?;
    Ok(h1.value(&p) + (z - &p).norm_squared() / (2.0 * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mat(n: usize, p: usize, vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(n, p, vals)
    }

    // -- l1 ------------------------------------------------------------------

    #[test]
    fn l1_prox_soft_thresholds_each_entry() {
        let z = mat(2, 2, &[3.0, -0.5, 1.0, -2.0]);
        let p = l1_prox(&z, 1.0).unwrap();
        assert_eq!(p.as_slice(), &[2.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn l1_prox_zero_scale_is_identity() {
        let z = mat(2, 1, &[0.3, -0.7]);
        assert_eq!(l1_prox(&z, 0.0).unwrap(), z);
    }

    #[test]
    fn l1_prox_rejects_negative_scale() {
        let z = mat(1, 1, &[1.0]);
        assert!(matches!(l1_prox(&z, -0.1), Err(Error::InvalidProxScale { .. })));
    }

    // -- top-K ----------------------------------------------------------------

    #[test]
    fn topk_subgradient_matches_worked_examples() {
        let g = topk_subgradient(&mat(3, 1, &[3.0, -2.0, 1.0]), 2, 1.0).unwrap();
        assert_eq!(g.as_slice(), &[1.0, -1.0, 0.0]);

        let g = topk_subgradient(&mat(2, 1, &[1.0, 1.0]), 1, 1.0).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.0], "tie must resolve to the lowest index");
    }

    #[test]
    fn topk_subgradient_zero_entry_contributes_zero() {
        let g = topk_subgradient(&mat(2, 1, &[0.0, 0.0]), 1, 2.5).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn topk_value_sums_largest_magnitudes() {
        let x = mat(2, 2, &[1.0, -4.0, 0.5, 2.0]);
        assert_abs_diff_eq!(topk_value(&x, 2, 0.5).unwrap(), 0.5 * 6.0, epsilon = 1e-15);
    }

    #[test]
    fn topk_rejects_out_of_range_order() {
        let x = mat(2, 1, &[1.0, 2.0]);
        assert!(topk_value(&x, 0, 1.0).is_err());
        assert!(topk_value(&x, 3, 1.0).is_err());
    }

    #[test]
    fn active_pieces_enumerates_swap_ties() {
        // Magnitudes (2, 1, 1, 1), K = 2: the second slot ties three ways.
        let x = mat(4, 1, &[2.0, 1.0, -1.0, 1.0]);
        let pieces = topk_active_pieces(&x, 2, 1.0, 1e-8, 64).unwrap();
        assert_eq!(pieces.len(), 3);
        assert_eq!(pieces[0].indices, vec![0, 1], "canonical selection must come first");
        assert_eq!(pieces[1].indices, vec![0, 2]);
        assert_eq!(pieces[2].indices, vec![0, 3]);
        assert_eq!(pieces[1].signs, vec![1.0, -1.0]);
        for piece in &pieces {
            assert!(piece.deficit.abs() <= 1e-15);
        }
    }

    #[test]
    fn active_pieces_band_includes_near_ties_only() {
        let x = mat(3, 1, &[1.0, 0.999, 0.4]);
        let tight = topk_active_pieces(&x, 1, 1.0, 1e-8, 64).unwrap();
        assert_eq!(tight.len(), 1);
        let loose = topk_active_pieces(&x, 1, 1.0, 1e-2, 64).unwrap();
        assert_eq!(loose.len(), 2);
        assert!(loose[1].deficit > 0.0 && loose[1].deficit <= 1e-2);
    }

    #[test]
    fn active_pieces_cap_overflow_reports_partial_list() {
        // All ten magnitudes equal, K = 5: C(10, 5) = 252 > 64 pieces.
        let x = DMatrix::from_element(10, 1, 1.0);
        match topk_active_pieces(&x, 5, 1.0, 1e-8, 64) {
            Err(Error::PieceCapExceeded { cap, partial }) => {
                assert_eq!(cap, 64);
                assert_eq!(partial.len(), 64);
            }
            other => panic!("expected PieceCapExceeded, got {other:?}"),
        }
    }

    #[test]
    fn active_pieces_zero_entries_get_positive_sign() {
        let x = mat(2, 1, &[0.0, 0.0]);
        let pieces = topk_active_pieces(&x, 1, 1.0, 1e-8, 64).unwrap();
        assert_eq!(pieces.len(), 2);
        assert_eq!(pieces[0].signs, vec![1.0]);
    }

    /// Brute-force oracle: max over all C(np, k) index subsets.
    fn topk_value_oracle(x: &DMatrix<f64>, k: usize, weight: f64) -> f64 {
        let flat = x.as_slice();
        let np = flat.len();
        let mut best = f64::NEG_INFINITY;
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            let s: f64 = comb.iter().map(|&l| flat[l].abs()).sum();
            best = best.max(s);
            // next combination
            let mut i = k;
            loop {
                if i == 0 {
                    return weight * best;
                }
                i -= 1;
                if comb[i] != i + np - k {
                    break;
                }
            }
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn topk_value_matches_subset_oracle(
            vals in proptest::collection::vec(-5.0f64..5.0, 6),
            k in 1usize..=6,
        ) {
            let x = mat(3, 2, &vals);
            let fast = topk_value(&x, k, 1.3).unwrap();
            let slow = topk_value_oracle(&x, k, 1.3);
            prop_assert!((fast - slow).abs() < 1e-12,
                "top-K value {fast} disagrees with brute-force subset max {slow}");
        }

        /// The canonical subgradient supports the function from below and is
        /// tight at the reference point.
        #[test]
        fn topk_subgradient_satisfies_subgradient_inequality(
            vals in proptest::collection::vec(-5.0f64..5.0, 6),
            other in proptest::collection::vec(-5.0f64..5.0, 6),
            k in 1usize..=6,
        ) {
            let x = mat(3, 2, &vals);
            let y = mat(3, 2, &other);
            let s = topk_subgradient(&x, k, 1.0).unwrap();
            let hx = topk_value(&x, k, 1.0).unwrap();
            let hy = topk_value(&y, k, 1.0).unwrap();
            prop_assert!((s.dot(&x) - hx).abs() < 1e-12,
                "subgradient of a positively homogeneous function must be tight");
            prop_assert!(hy + 1e-12 >= hx + s.dot(&(&y - &x)),
                "subgradient inequality violated");
        }

        /// Every enumerated piece minorizes the norm globally and is
        /// eta-tight at the reference point.
        #[test]
        fn active_pieces_are_tight_minorants(
            vals in proptest::collection::vec(-3.0f64..3.0, 6),
            probe in proptest::collection::vec(-3.0f64..3.0, 6),
            k in 1usize..=3,
            eta in prop_oneof![Just(1e-8), Just(0.1), Just(1.0)],
        ) {
            let x = mat(3, 2, &vals);
            let y = mat(3, 2, &probe);
            let hx = topk_value(&x, k, 1.0).unwrap();
            let hy = topk_value(&y, k, 1.0).unwrap();
            let pieces = topk_active_pieces(&x, k, 1.0, eta, 64).unwrap();
            prop_assert!(!pieces.is_empty());
            prop_assert!(pieces[0].deficit.abs() < 1e-12, "first piece must be exactly maximal");
            for piece in &pieces {
                let at_x = piece.value_at(&x, 1.0);
                prop_assert!(hx - at_x <= eta + 1e-12, "piece not within the active band");
                prop_assert!((hx - at_x - piece.deficit).abs() < 1e-12);
                let at_y = piece.value_at(&y, 1.0);
                prop_assert!(at_y <= hy + 1e-12, "piece fails to minorize the norm");
                let grad = piece.gradient(3, 2, 1.0);
                prop_assert!((grad.dot(&y) - at_y).abs() < 1e-12, "piece must be linear");
            }
        }

        #[test]
        fn l1_prox_is_nonexpansive(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            s in 0.0f64..3.0,
        ) {
            let za = mat(3, 2, &a);
            let zb = mat(3, 2, &b);
            let pa = l1_prox(&za, s).unwrap();
            let pb = l1_prox(&zb, s).unwrap();
            prop_assert!((pa - pb).norm() <= (za - zb).norm() + 1e-12);
        }

        /// ∇(h1)_t is 1/t-Lipschitz and matches finite differences of the
        /// envelope value.
        #[test]
        fn moreau_gradient_is_lipschitz_and_consistent(
            a in proptest::collection::vec(-2.0f64..2.0, 4),
            b in proptest::collection::vec(-2.0f64..2.0, 4),
            t in 0.1f64..2.0,
        ) {
            let h1 = ProxTerm::l1(0.7).unwrap();
            let za = mat(2, 2, &a);
            let zb = mat(2, 2, &b);
            let ga = moreau_envelope_grad(&h1, &za, t).unwrap();
            let gb = moreau_envelope_grad(&h1, &zb, t).unwrap();
            prop_assert!((&ga - &gb).norm() <= (&za - &zb).norm() / t + 1e-10,
                "Moreau gradient is not 1/t-Lipschitz");

            // Directional finite difference of the envelope value.
            let dir = (&zb - &za).normalize();
            let eps = 1e-6;
            let fp = moreau_envelope_value(&h1, &(&za + &dir * eps), t).unwrap();
            let fm = moreau_envelope_value(&h1, &(&za - &dir * eps), t).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            let an = ga.dot(&dir);
            prop_assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()),
                "envelope gradient disagrees with finite differences: {fd} vs {an}");
        }
    }

    // -- composite problem -----------------------------------------------------

    struct ConstNegG;
    impl SmoothTerm for ConstNegG {
        fn value(&self, _x: &DMatrix<f64>) -> f64 {
            -1.0
        }
        fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
            DMatrix::zeros(x.nrows(), x.ncols())
        }
    }

    struct UnitG;
    impl SmoothTerm for UnitG {
        fn value(&self, _x: &DMatrix<f64>) -> f64 {
            1.0
        }
        fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
            DMatrix::zeros(x.nrows(), x.ncols())
        }
    }

    struct ZeroF;
    impl SqrtWeaklyConvex for ZeroF {
        fn value(&self, _x: &DMatrix<f64>) -> f64 {
            0.0
        }
        fn subgradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
            DMatrix::zeros(x.nrows(), x.ncols())
        }
        fn modulus(&self) -> f64 {
            0.0
        }
    }

    #[test]
    fn objective_rejects_nonpositive_denominator() {
        let m = Stiefel::new(3, 1).unwrap();
        let x = m.random_point_seeded(0);
        let p = CompositeProblem::new(m, Arc::new(ZeroF), Arc::new(ConstNegG));
        assert!(matches!(
            p.objective_value(&x),
            Err(Error::NonpositiveDenominator { value }) if value == -1.0
        ));
    }

    #[test]
    fn objective_composes_terms() {
        let m = Stiefel::new(3, 1).unwrap();
        let x = m.point(mat(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let p = CompositeProblem::new(m, Arc::new(ZeroF), Arc::new(UnitG))
            .with_h1(ProxTerm::l1(2.0).unwrap())
            .with_h2(H2Term::FiniteMax(Arc::new(TopKNorm::new(1, 0.5).unwrap())));
        let terms = p.eval_terms(&x).unwrap();
        assert_abs_diff_eq!(terms.h1, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(terms.h2, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(terms.total, 2.0 - 0.5 - 0.0, epsilon = 1e-15);
    }

    #[test]
    fn linearization_vector_combines_gradients() {
        // With r = 0, f = 0, g ≡ 1: w = -y/g - z = -y - z.
        let m = Stiefel::new(3, 1).unwrap();
        let x = m.random_point_seeded(4);
        let p = CompositeProblem::new(m, Arc::new(ZeroF), Arc::new(UnitG));
        let y = mat(3, 1, &[1.0, 2.0, 3.0]);
        let z = mat(3, 1, &[0.5, 0.0, -0.5]);
        let w = p.linearization_vector(&x, &y, &z).unwrap();
        assert!((w + y + z).norm() < 1e-15);
    }
}
