//! The convex tangent-space subproblem solved at every outer iteration:
//!
//! ```text
//!     min_{v ∈ T_X}  q(v) = h1(X + v) + <w, v> + ||v||²_F / (2t)
//! ```
//!
//! Strong convexity makes the minimizer unique. The constraint
//! `A_X(v) = Xᵀv + vᵀX = 0` is dualized with a symmetric multiplier `Λ`;
//! with `z(Λ) = X - t(w - A*_X(Λ))` and `v(Λ) = prox_{t·h1}(z(Λ)) - X`
//! the (negated) dual is the smooth convex function
//!
//! ```text
//!     D(Λ) = (t/2) ||w - A*_X(Λ)||²_F - (h1)_t(z(Λ)),
//!     ∇D(Λ) = A_X(v(Λ)),
//! ```
//!
//! where `(h1)_t` is the Moreau envelope. Since `A_X A*_X = 4I` on
//! symmetric matrices and the prox is nonexpansive, `∇D` is `4t`-Lipschitz,
//! which fixes the gradient step `1/(4t)`. At the dual optimum the recovered
//! `v(Λ*)` is tangent and solves the primal.
//!
//! Three solvers cover the `h1` cases:
//!
//! * [`solve_closed_form`] — `h1 = 0`: `v = -t P_X(w)` with an explicit
//!   multiplier, no iteration at all.
//! * [`solve_ssn_l1`] — `h1 = λ||.||_1`: a damped semismooth Newton method
//!   on `∇D(Λ) = 0`. The generalized Jacobian `J(Λ)[Δ] = t·A_X(σ ⊙ A*_X(Δ))`
//!   (σ the active-entry mask of the soft threshold) is positive
//!   semidefinite, so Newton directions regularized by `1e-12 I` are descent
//!   directions for `D` and a backtracking step globalizes the iteration.
//! * [`solve_dual_fista`] — any prox-capable `h1`: accelerated gradient
//!   descent on `D`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifolds::{sym_part, ManifoldPoint, Stiefel, TangentVector};
use crate::objective::{moreau_envelope_value, ProxTerm};
use crate::tol;

/// One tangent-space subproblem instance `(X, w, t, h1)`.
#[derive(Debug, Clone)]
pub struct TangentSubproblem<'a> {
    manifold: &'a Stiefel,
    x: &'a ManifoldPoint,
    w: &'a DMatrix<f64>,
    t: f64,
    h1: &'a ProxTerm,
}

/// Solution of a tangent subproblem: the minimizer, the dual multiplier
/// that certifies it, and solve diagnostics.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    /// The (projected, exactly tangent) minimizer.
    pub v: TangentVector,
    /// Symmetric `p x p` dual multiplier of the tangency constraint.
    pub dual: DMatrix<f64>,
    /// `||v - v(Λ)||_F + ||A_X(v)||_F` for the returned pair.
    pub kkt_residual: f64,
    /// Inner iterations spent (0 for the closed form).
    pub inner_iterations: usize,
    /// False when the iteration budget ran out before the tolerance was met.
    pub converged: bool,
}

impl<'a> TangentSubproblem<'a> {
    pub fn new(
        manifold: &'a Stiefel,
        x: &'a ManifoldPoint,
        w: &'a DMatrix<f64>,
        t: f64,
        h1: &'a ProxTerm,
    ) -> Result<Self> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::InvalidConfig {
                reason: format!("subproblem step size must be positive and finite, got {t}"),
            });
        }
        if w.nrows() != manifold.n() || w.ncols() != manifold.p() {
            return Err(Error::dims(format!(
                "linearization vector must be {}x{}, got {}x{}",
                manifold.n(),
                manifold.p(),
                w.nrows(),
                w.ncols()
            )));
        }
        Ok(TangentSubproblem { manifold, x, w, t, h1 })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn x(&self) -> &ManifoldPoint {
        self.x
    }

    pub fn w(&self) -> &DMatrix<f64> {
        self.w
    }

    pub fn h1(&self) -> &ProxTerm {
        self.h1
    }

    pub fn manifold(&self) -> &Stiefel {
        self.manifold
    }

    /// Primal objective `q(v) = h1(x+v) + <w,v> + ||v||²/(2t)` for any
    /// ambient `v` (tangency not required here).
    pub fn primal_objective(&self, v: &DMatrix<f64>) -> f64 {
        self.h1.value(&(self.x.as_matrix() + v))
            + self.w.dot(v)
            + v.norm_squared() / (2.0 * self.t)
    }

    /// The (negated) dual objective `D(Λ)`; minimizing `D` solves the dual.
    /// At a primal-dual optimal pair, `q(v*) = -D(Λ*)`.
    pub fn dual_objective(&self, lambda: &DMatrix<f64>) -> Result<f64> {
        let c = self.w - self.manifold.normal_constraint_adjoint(self.x, lambda);
        let z = self.x.as_matrix() - &c * self.t;
        Ok(0.5 * self.t * c.norm_squared() - moreau_envelope_value(self.h1, &z, self.t)?)
    }

    /// How much the solution improves on staying put, measured by the
    /// strengthened decrease inequality that strong convexity guarantees:
    ///
    /// ```text
    ///     h1(x + v) + <w, v> + ||v||²/t  <=  h1(x)
    /// ```
    ///
    /// Returns the left-over margin (nonnegative up to round-off whenever
    /// `v` solves the subproblem).
    pub fn descent_margin(&self, v: &TangentVector) -> f64 {
        let vm = v.as_matrix();
        self.h1.value(self.x.as_matrix())
            - self.h1.value(&(self.x.as_matrix() + vm))
            - self.w.dot(vm)
            - vm.norm_squared() / self.t
    }

    /// `z(Λ)`, `v(Λ)` and the dual gradient `E(Λ) = A_X(v(Λ))`.
    fn dual_state(&self, lambda: &DMatrix<f64>) -> Result<DualState> {
        let c = self.w - self.manifold.normal_constraint_adjoint(self.x, lambda);
        let z = self.x.as_matrix() - &c * self.t;
        let v = self.h1.prox(&z, self.t)? - self.x.as_matrix();
        let grad = self.manifold.normal_constraint_apply(self.x, &v);
        Ok(DualState { v, grad })
    }

    /// Package a dual iterate as a full solution: project `v(Λ)` onto the
    /// tangent space and measure the KKT residual of the projected pair.
    fn finish(
        &self,
        lambda: DMatrix<f64>,
        inner_iterations: usize,
        converged: bool,
    ) -> Result<SubproblemSolution> {
        let state = self.dual_state(&lambda)?;
        let v = self.manifold.tangent_project(self.x, &state.v)?;
        let kkt = self.kkt_of(&v, &lambda)?;
        Ok(SubproblemSolution { v, dual: lambda, kkt_residual: kkt, inner_iterations, converged })
    }

    fn kkt_of(&self, v: &TangentVector, lambda: &DMatrix<f64>) -> Result<f64> {
        let state = self.dual_state(lambda)?;
        let r_stat = (v.as_matrix() - &state.v).norm();
        let r_feas = self.manifold.normal_constraint_apply(self.x, v.as_matrix()).norm();
        Ok(r_stat + r_feas)
    }
}

struct DualState {
    v: DMatrix<f64>,
    grad: DMatrix<f64>,
}

/// Default inner tolerance, `1e-10 * sqrt(n p)` — tight enough that inner
/// error never contaminates the outer stopping test.
pub fn default_inner_tolerance(manifold: &Stiefel) -> f64 {
    tol::INNER_TOL_SCALE * (manifold.ambient_dim() as f64).sqrt()
}

/// KKT residual `||v - v(Λ)||_F + ||A_X(v)||_F` of an arbitrary
/// primal-dual pair; zero exactly at the unique optimum.
pub fn kkt_residual(
    sp: &TangentSubproblem,
    v: &TangentVector,
    dual: &DMatrix<f64>,
) -> Result<f64> {
    sp.kkt_of(v, dual)
}

/// Solve the subproblem for `h1 = 0`, where the tangency-constrained
/// quadratic has the explicit solution `v = -t P_X(w)` with multiplier
/// `Λ = A_X(w)/4 = sym(Xᵀw)/2`.
///
/// On the circle `St(2,1)` at `x = e_1` with `w = (5,3)ᵀ`, `t = 0.1`:
/// `v = (0, -0.3)ᵀ`.
pub fn solve_closed_form(sp: &TangentSubproblem) -> Result<SubproblemSolution> {
    if !matches!(sp.h1, ProxTerm::Zero) {
        return Err(Error::ClosedFormNeedsZeroProx { h1: sp.h1.describe() });
    }
    let v = sp.manifold.tangent_project(sp.x, sp.w)?.scaled(-sp.t);
    let dual = sym_part(&sp.x.as_matrix().tr_mul(sp.w)) * 0.5;
    let kkt = sp.kkt_of(&v, &dual)?;
    Ok(SubproblemSolution { v, dual, kkt_residual: kkt, inner_iterations: 0, converged: true })
}

/// Accelerated gradient descent on the dual `D(Λ)` with the fixed step
/// `1/(4t)` and adaptive restart (momentum is dropped whenever it points
/// against the gradient, which restores fast convergence on the flat
/// directions a saturated soft threshold creates). Works for every
/// prox-capable `h1`. Stops when `||∇D(Λ)||_F <= tol`; if the budget runs
/// out first, the last iterate is returned with `converged = false`.
pub fn solve_dual_fista(
    sp: &TangentSubproblem,
    tolerance: f64,
    max_inner: usize,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<SubproblemSolution> {
    let p = sp.manifold.p();
    let mut lambda = initial_dual(p, warm_start)?;
    let step = 1.0 / (4.0 * sp.t);

    let mut prev = lambda.clone();
    let mut y = lambda.clone();
    let mut s = 1.0f64;
    for it in 0..max_inner {
        let at_y = sp.dual_state(&y)?;
        let next = &y - &at_y.grad * step;

        let at_next = sp.dual_state(&next)?;
        if at_next.grad.norm() <= tolerance {
            return sp.finish(next, it + 1, true);
        }

        if at_next.grad.dot(&(&next - &prev)) > 0.0 {
            // Momentum points uphill: restart the acceleration.
            s = 1.0;
            y = next.clone();
        } else {
            let s_next = 0.5 * (1.0 + (1.0 + 4.0 * s * s).sqrt());
            y = &next + (&next - &prev) * ((s - 1.0) / s_next);
            s = s_next;
        }
        prev = lambda;
        lambda = next;
    }
    log::warn!(
        "dual FISTA exhausted {max_inner} iterations (residual {:.3e} > {tolerance:.3e})",
        sp.dual_state(&lambda)?.grad.norm()
    );
    sp.finish(lambda, max_inner, false)
}

/// Damped semismooth Newton for `h1 = λ||.||_1`. Falls back to
/// [`solve_dual_fista`] (continuing from the current multiplier) if the
/// Newton iteration stalls; with `λ = 0` it reproduces the closed form.
pub fn solve_ssn_l1(
    sp: &TangentSubproblem,
    tolerance: f64,
    max_inner: usize,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<SubproblemSolution> {
    let weight = match sp.h1 {
        ProxTerm::L1 { weight } => *weight,
        other => return Err(Error::SsnNeedsL1 { h1: other.describe() }),
    };
    let p = sp.manifold.p();
    let mut lambda = initial_dual(p, warm_start)?;

    // Newton outer iterations are few; everything beyond this is stalling
    // and FISTA finishes the job more robustly.
    let newton_budget = max_inner.min(100);
    let mut used = 0usize;
    let mut d_val = sp.dual_objective(&lambda)?;
    while used < newton_budget {
        let state = sp.dual_state(&lambda)?;
        if state.grad.norm() <= tolerance {
            return sp.finish(lambda, used, true);
        }

        // Active mask of the soft threshold at z(Λ).
        let c = sp.w - sp.manifold.normal_constraint_adjoint(sp.x, &lambda);
        let z = sp.x.as_matrix() - &c * sp.t;
        let thresh = sp.t * weight;
        let mask = z.map(|e| if e.abs() > thresh { 1.0 } else { 0.0 });

        let dir = match newton_direction(sp, &mask, &state.grad) {
            Some(d) => d,
            None => -&state.grad * (1.0 / (4.0 * sp.t)),
        };
        used += 1;

        // Backtracking on the convex dual; <∇D, dir> < 0 by construction.
        let slope = state.grad.dot(&dir);
        let mut beta = 1.0f64;
        let mut stepped = false;
        while beta >= 1e-14 {
            let cand = &lambda + &dir * beta;
            let cand_val = sp.dual_objective(&cand)?;
            if cand_val <= d_val + 1e-4 * beta * slope {
                lambda = cand;
                d_val = cand_val;
                stepped = true;
                break;
            }
            beta *= 0.5;
        }
        if !stepped {
            break; // stalled; hand over to FISTA
        }
    }

    let state = sp.dual_state(&lambda)?;
    if state.grad.norm() <= tolerance {
        return sp.finish(lambda, used, true);
    }
    log::debug!(
        "semismooth Newton stalled after {used} steps (residual {:.3e}); finishing with FISTA",
        state.grad.norm()
    );
    let remaining = max_inner.saturating_sub(used).max(1);
    let mut sol = solve_dual_fista(sp, tolerance, remaining, Some(&lambda))?;
    sol.inner_iterations += used;
    Ok(sol)
}

/// Solve with the method matched to `h1`: closed form for `Zero`,
/// semismooth Newton for `L1`, dual FISTA otherwise.
pub fn solve(
    sp: &TangentSubproblem,
    tolerance: f64,
    max_inner: usize,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<SubproblemSolution> {
    match sp.h1 {
        ProxTerm::Zero => solve_closed_form(sp),
        ProxTerm::L1 { .. } => solve_ssn_l1(sp, tolerance, max_inner, warm_start),
        ProxTerm::Custom(_) => solve_dual_fista(sp, tolerance, max_inner, warm_start),
    }
}

fn initial_dual(p: usize, warm_start: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    match warm_start {
        None => Ok(DMatrix::zeros(p, p)),
        Some(m) => {
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::dims(format!(
                    "warm-start multiplier must be {p}x{p}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(sym_part(m))
        }
    }
}

/// Solve `(J + εI) d = -E` by conjugate gradients, where
/// `J[Δ] = t·A_X(mask ⊙ A*_X(Δ))` is the PSD generalized Jacobian of the
/// dual gradient. Returns `None` when CG cannot reduce the residual (only
/// possible through severe numerical degeneracy).
fn newton_direction(
    sp: &TangentSubproblem,
    mask: &DMatrix<f64>,
    grad: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let eps = 1e-12;
    let apply = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let am = sp.manifold.normal_constraint_adjoint(sp.x, m);
        let masked = am.zip_map(mask, |a, s| a * s);
        sp.manifold.normal_constraint_apply(sp.x, &masked) * sp.t + m * eps
    };

    let p = grad.nrows();
    let dim = p * (p + 1) / 2;
    let mut d = DMatrix::zeros(p, p);
    let mut r = -grad.clone();
    let b_norm = r.norm();
    if b_norm == 0.0 {
        return None;
    }
    let cg_tol = 1e-12 * b_norm.max(1e-300);
    let mut q = r.clone();
    let mut rs = r.norm_squared();
    for _ in 0..(2 * dim + 4) {
        let aq = apply(&q);
        let qaq = q.dot(&aq);
        if qaq <= 0.0 {
            break; // numerically indefinite; use what we have
        }
        let alpha = rs / qaq;
        d += &q * alpha;
        r -= aq * alpha;
        let rs_new = r.norm_squared();
        if rs_new.sqrt() <= cg_tol {
            break;
        }
        q = &r + &q * (rs_new / rs);
        rs = rs_new;
    }
    if d.norm() == 0.0 {
        return None;
    }
    // Descent check against the actual gradient (guards round-off cases).
    if grad.dot(&d) >= 0.0 {
        return None;
    }
    Some(d)
}
