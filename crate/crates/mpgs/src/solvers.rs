//! Outer solvers: the proximal gradient-subgradient iteration and its
//! competing-pieces variant.
//!
//! Both methods repeat three moves. First, linearize the concave and smooth
//! parts at the iterate `x` using a subgradient `y ∈ ∂f(x)` and a choice of
//! `z` from `∂h2(x)`, giving
//!
//! ```text
//!     w = ∇r(x) + f(x)/g(x)² ∇g(x) - y/g(x) - z.
//! ```
//!
//! Second, solve the tangent-space subproblem
//! `min_{v ∈ T_x} h1(x+v) + <w,v> + ||v||²/(2t)` ([`crate::subproblem`]).
//! Third, backtrack `alpha = gamma^m` until the polar retraction of
//! `alpha·v` satisfies a sufficient-decrease test and accept the point.
//!
//! The iteration stops when `||v||²_F / t² < vtol_scale · n p`, the scale-
//! free stationarity measure of the subproblem.
//!
//! [`mpgsa_solve`] picks a single `z` (for a finite-max `h2`, the gradient
//! of the exactly-maximal piece). At points where several pieces are nearly
//! active that choice can stall at a merely critical point;
//! [`empgsa_solve`] instead solves one subproblem per nearly-active piece,
//! lets the candidates compete, and accepts only when the winner beats the
//! composite decrease test against every active piece — which is what lets
//! it walk away from such points.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifolds::{ManifoldPoint, TangentVector};
use crate::objective::CompositeProblem;
use crate::subproblem::{self, SubproblemSolution, TangentSubproblem};
use crate::tol;

/// How the proximal step size `t_k` is chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizeRule {
    /// Use this value every iteration.
    Fixed(f64),
    /// Ask the problem's step-size hint (attached by instance builders) and
    /// clamp the answer to `[t_lo, t_hi]`.
    Adaptive,
}

/// Configuration shared by both solvers.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Backtracking ratio in (0, 1).
    pub gamma: f64,
    pub stepsize: StepsizeRule,
    /// Clamp interval for adaptive step sizes.
    pub t_lo: f64,
    pub t_hi: f64,
    /// Outer iteration cap.
    pub max_iter: usize,
    /// Stop when `||v||² / t² < vtol_scale * n * p`.
    pub vtol_scale: f64,
    /// Active-piece band half-width for the competing-pieces solver.
    pub eta: f64,
    /// Cap on enumerated nearly-active pieces.
    pub piece_cap: usize,
    /// Line-search budget; `gamma^max_backtracks` is the smallest step tried.
    pub max_backtracks: usize,
    /// Inner (dual) solver tolerance; `None` means `1e-10 sqrt(np)`.
    pub inner_tolerance: Option<f64>,
    /// Inner (dual) solver iteration budget.
    pub inner_max_iter: usize,
    /// Seed callers should use when they need a random start; the solvers
    /// themselves are deterministic and never draw from it.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gamma: 0.5,
            stepsize: StepsizeRule::Adaptive,
            t_lo: tol::STEPSIZE_LO,
            t_hi: tol::STEPSIZE_HI,
            max_iter: 10_000,
            vtol_scale: tol::VTOL_SCALE,
            eta: tol::ACTIVE_PIECE_ETA,
            piece_cap: tol::PIECE_CAP,
            max_backtracks: 50,
            inner_tolerance: None,
            inner_max_iter: tol::INNER_MAX_ITER,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidConfig { reason });
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if let StepsizeRule::Fixed(t) = self.stepsize {
            if !t.is_finite() || t <= 0.0 {
                return bad(format!("fixed step size must be positive, got {t}"));
            }
        }
        if !(self.t_lo > 0.0 && self.t_lo <= self.t_hi) {
            return bad(format!(
                "step-size clamp requires 0 < t_lo <= t_hi, got [{}, {}]",
                self.t_lo, self.t_hi
            ));
        }
        if !(self.vtol_scale > 0.0) {
            return bad(format!("vtol_scale must be positive, got {}", self.vtol_scale));
        }
        if self.eta < 0.0 {
            return bad(format!("eta must be nonnegative, got {}", self.eta));
        }
        if self.piece_cap == 0 || self.max_backtracks == 0 {
            return bad("piece_cap and max_backtracks must be at least 1".into());
        }
        Ok(())
    }

    fn inner_tolerance_for(&self, problem: &CompositeProblem) -> f64 {
        self.inner_tolerance
            .unwrap_or_else(|| subproblem::default_inner_tolerance(problem.manifold()))
    }
}

/// Why a solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// The stationarity measure fell below tolerance.
    Tolerance,
    /// The iteration cap was reached first.
    MaxIter,
    /// Backtracking could not find an acceptable step.
    LineSearchFailure,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TerminationReason::Tolerance => write!(f, "tolerance"),
            TerminationReason::MaxIter => write!(f, "max-iterations"),
            TerminationReason::LineSearchFailure => write!(f, "line-search-failure"),
        }
    }
}

/// One accepted outer step.
#[derive(Debug, Clone)]
pub struct IterateRecord {
    /// 1-based index of the accepted step.
    pub k: usize,
    /// Objective after the step.
    pub f_value: f64,
    /// Norm of the accepted subproblem solution (the selected piece's, for
    /// the competing-pieces solver).
    pub v_norm: f64,
    pub alpha: f64,
    pub t: f64,
    /// Backtracks `m` spent before acceptance (`alpha = gamma^m`).
    pub backtracks: usize,
    /// Subproblems solved this iteration (1 unless pieces compete).
    pub active_pieces: usize,
    /// Inner iterations summed over this iteration's subproblem solves.
    pub inner_iterations: usize,
    /// Slack left in the acceptance inequality (the minimum over pieces for
    /// the composite test); at least `-1e-12 * max(1, |F|)` by construction.
    pub descent_margin: f64,
    /// Wall-clock seconds this iteration took (not deterministic; excluded
    /// from report files).
    pub wall_time_s: f64,
}

/// Result of an outer solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub point: ManifoldPoint,
    /// Objective at `point`.
    pub f_value: f64,
    /// Objective at the start point.
    pub initial_f: f64,
    /// Accepted steps (= `log.len()`).
    pub iterations: usize,
    pub termination: TerminationReason,
    /// `||v||/t` of the last subproblem solved — for the competing-pieces
    /// solver, the maximum over the final active pieces.
    pub stationarity_residual: f64,
    pub log: Vec<IterateRecord>,
}

/// Outcome of one backtracking line search.
#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub point: ManifoldPoint,
    pub f_value: f64,
    /// Backtracks spent (`alpha = gamma^backtracks`).
    pub backtracks: usize,
    /// Acceptance slack: decrease threshold minus achieved objective.
    pub margin: f64,
}

/// Backtrack `alpha = gamma^m` until
///
/// ```text
///     F(Retr_x(alpha v))  <=  F(x) - c · (alpha / t) ||v||²_F
/// ```
///
/// with `c = 1/2`, or `c = 1/4` when `quarter_decrease` is set (the
/// per-candidate margin the competing-pieces acceptance test uses).
/// Comparisons carry a relative slack of `1e-12 max(1, |F(x)|)` so exact
/// ties cannot fail on round-off. Fails after `max_backtracks` rejections.
pub fn line_search(
    problem: &CompositeProblem,
    v: &TangentVector,
    t: f64,
    gamma: f64,
    f_x: f64,
    quarter_decrease: bool,
    max_backtracks: usize,
) -> Result<LineSearchOutcome> {
    let manifold = problem.manifold();
    let c = if quarter_decrease { 0.25 } else { 0.5 };
    let vsq = v.norm_squared();
    let slack = tol::LINE_SEARCH_SLACK * f_x.abs().max(1.0);
    let mut alpha = 1.0f64;
    for m in 0..=max_backtracks {
        let cand = manifold.retract_polar_scaled(v, alpha)?;
        let f_cand = problem.objective_value(&cand)?;
        let threshold = f_x - c * alpha / t * vsq;
        if f_cand <= threshold + slack {
            return Ok(LineSearchOutcome {
                alpha,
                point: cand,
                f_value: f_cand,
                backtracks: m,
                margin: threshold - f_cand,
            });
        }
        alpha *= gamma;
    }
    Err(Error::LineSearchFailure { backtracks: max_backtracks, t })
}

/// The adaptive step size for fractional trace-quadratic objectives:
///
/// ```text
///     t(X) = tr(XᵀBX)² / ( tr(XᵀAX) · ||B||₂ )
/// ```
///
/// clamped to `[t_lo, t_hi]`; a vanishing numerator of the fraction
/// (`tr(XᵀAX) = 0`) means the curvature bound degenerates and the upper
/// clamp is returned. With `A = B = I_n`, `t = p`; with `B = 2I`, `A = I`,
/// `t = 2p`.
pub fn stepsize_adaptive_fractional(
    x: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    specnorm_b: f64,
    t_lo: f64,
    t_hi: f64,
) -> f64 {
    let trace_of = |m: &DMatrix<f64>| -> f64 {
        // tr(XᵀMX) without forming the p x p product.
        let mx = m * x;
        x.dot(&mx)
    };
    let denom = trace_of(a) * specnorm_b;
    if !(denom > 0.0) || !denom.is_finite() {
        return t_hi;
    }
    let num = trace_of(b).powi(2);
    (num / denom).clamp(t_lo, t_hi)
}

fn stepsize_for(problem: &CompositeProblem, x: &ManifoldPoint, cfg: &SolverConfig) -> Result<f64> {
    match cfg.stepsize {
        StepsizeRule::Fixed(t) => Ok(t),
        StepsizeRule::Adaptive => {
            let hint = problem.stepsize_hint_at(x).ok_or(Error::MissingStepsizeHint)?;
            if !hint.is_finite() {
                return Ok(cfg.t_hi);
            }
            Ok(hint.clamp(cfg.t_lo, cfg.t_hi))
        }
    }
}

fn check_start(problem: &CompositeProblem, x0: &ManifoldPoint) -> Result<()> {
    let m = problem.manifold();
    if x0.nrows() != m.n() || x0.ncols() != m.p() {
        return Err(Error::dims(format!(
            "start point is {}x{} but the problem lives on St({}, {})",
            x0.nrows(),
            x0.ncols(),
            m.n(),
            m.p()
        )));
    }
    Ok(())
}

/// Minimize with one tangent subproblem per iteration (subgradient choice:
/// for finite-max `h2`, the exactly-maximal piece).
///
/// Deterministic: the same problem, start point, and configuration produce
/// bitwise-identical iterates on every run.
pub fn mpgsa_solve(
    problem: &CompositeProblem,
    x0: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_start(problem, x0)?;
    let manifold = problem.manifold();
    let vtol = cfg.vtol_scale * manifold.ambient_dim() as f64;
    let inner_tol = cfg.inner_tolerance_for(problem);

    let mut x = x0.clone();
    let mut f_x = problem.objective_value(&x)?;
    let initial_f = f_x;
    let mut warm: Option<DMatrix<f64>> = None;
    let mut log: Vec<IterateRecord> = Vec::new();
    let termination;
    let stationarity_residual;

    loop {
        let started = Instant::now();
        let t = stepsize_for(problem, &x, cfg)?;
        let y = problem.f_term().subgradient(x.as_matrix());
        let z = problem.h2().subgradient(x.as_matrix());
        let w = problem.linearization_vector(&x, &y, &z)?;
        let sp = TangentSubproblem::new(manifold, &x, &w, t, problem.h1())?;
        let sol = subproblem::solve(&sp, inner_tol, cfg.inner_max_iter, warm.as_ref())?;
        warm = Some(sol.dual.clone());

        let residual_sq = sol.v.norm_squared() / (t * t);
        if residual_sq < vtol {
            termination = TerminationReason::Tolerance;
            stationarity_residual = residual_sq.sqrt();
            break;
        }
        if log.len() >= cfg.max_iter {
            termination = TerminationReason::MaxIter;
            stationarity_residual = residual_sq.sqrt();
            break;
        }

        match line_search(problem, &sol.v, t, cfg.gamma, f_x, false, cfg.max_backtracks) {
            Ok(out) => {
                let k = log.len() + 1;
                let (next, f_next) = refreshed(problem, out.point, out.f_value, k)?;
                log.push(IterateRecord {
                    k,
                    f_value: f_next,
                    v_norm: sol.v.norm(),
                    alpha: out.alpha,
                    t,
                    backtracks: out.backtracks,
                    active_pieces: 1,
                    inner_iterations: sol.inner_iterations,
                    descent_margin: out.margin,
                    wall_time_s: started.elapsed().as_secs_f64(),
                });
                x = next;
                f_x = f_next;
            }
            Err(Error::LineSearchFailure { .. }) => {
                termination = TerminationReason::LineSearchFailure;
                stationarity_residual = residual_sq.sqrt();
                break;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(SolveResult {
        point: x,
        f_value: f_x,
        initial_f,
        iterations: log.len(),
        termination,
        stationarity_residual,
        log,
    })
}

/// Re-orthonormalize periodically so feasibility drift cannot accumulate
/// over long runs.
fn refreshed(
    problem: &CompositeProblem,
    point: ManifoldPoint,
    f_value: f64,
    k: usize,
) -> Result<(ManifoldPoint, f64)> {
    if k % tol::REORTHONORMALIZE_EVERY == 0 {
        let snapped = problem.manifold().re_orthonormalize(&point)?;
        let f = problem.objective_value(&snapped)?;
        Ok((snapped, f))
    } else {
        Ok((point, f_value))
    }
}

/// Minimize with competing subproblems, one per nearly-active piece of the
/// finite-max `h2`. Fails with [`Error::NotFiniteMax`] when `h2` is not a
/// finite max.
///
/// Per iteration: every piece `i` in the `eta`-active set gets its own
/// linearization `z = ∇ψ_i(x)` and subproblem solution `v_i`. During the
/// line search, each candidate `x_i = Retr_x(alpha v_i)` is scored by
/// `F(x_i) + (alpha/4t)||v_i||²` and the best index `î` (ties to the
/// lowest, i.e. most-active, piece) must pass the composite test
///
/// ```text
///     F(x_î) <= F(x) + h2(x) - ψ_i(x) - (alpha/4t)(||v_î||² + ||v_i||²)
/// ```
///
/// against *every* active piece `i` before the step is accepted. With a
/// single active piece this reduces exactly to the plain solver's test, and
/// the two methods produce the same iterates.
pub fn empgsa_solve(
    problem: &CompositeProblem,
    x0: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_start(problem, x0)?;
    if !problem.h2().is_finite_max() {
        return Err(Error::NotFiniteMax { operation: "empgsa_solve" });
    }
    let manifold = problem.manifold();
    let vtol = cfg.vtol_scale * manifold.ambient_dim() as f64;
    let inner_tol = cfg.inner_tolerance_for(problem);

    let mut x = x0.clone();
    let mut f_x = problem.objective_value(&x)?;
    let initial_f = f_x;
    let mut warm: Option<DMatrix<f64>> = None;
    let mut log: Vec<IterateRecord> = Vec::new();
    let termination;
    let stationarity_residual;

    'outer: loop {
        let started = Instant::now();
        let t = stepsize_for(problem, &x, cfg)?;
        let y = problem.f_term().subgradient(x.as_matrix());
        let pieces = problem.h2().active_pieces(x.as_matrix(), cfg.eta, cfg.piece_cap)?;
        // Reference value of h2 at x: the exactly-maximal piece, so the
        // deficit of piece 0 is zero by construction.
        let h2_ref = pieces[0].value;

        let mut sols: Vec<SubproblemSolution> = Vec::with_capacity(pieces.len());
        let mut inner_total = 0usize;
        for piece in &pieces {
            let w = problem.linearization_vector(&x, &y, &piece.gradient)?;
            let sp = TangentSubproblem::new(manifold, &x, &w, t, problem.h1())?;
            let sol = subproblem::solve(&sp, inner_tol, cfg.inner_max_iter, warm.as_ref())?;
            inner_total += sol.inner_iterations;
            sols.push(sol);
        }

        let max_residual_sq = sols
            .iter()
            .map(|s| s.v.norm_squared() / (t * t))
            .fold(0.0f64, f64::max);
        if max_residual_sq < vtol {
            termination = TerminationReason::Tolerance;
            stationarity_residual = max_residual_sq.sqrt();
            break;
        }
        if log.len() >= cfg.max_iter {
            termination = TerminationReason::MaxIter;
            stationarity_residual = max_residual_sq.sqrt();
            break;
        }

        let slack = tol::LINE_SEARCH_SLACK * f_x.abs().max(1.0);
        let quarter = 0.25 / t;
        let mut alpha = 1.0f64;
        for m in 0..=cfg.max_backtracks {
            // Retract every candidate at this alpha and score them.
            let mut best: Option<(usize, f64, ManifoldPoint, f64)> = None; // (i, F, point, score)
            for (i, sol) in sols.iter().enumerate() {
                let cand = manifold.retract_polar_scaled(&sol.v, alpha)?;
                let f_cand = problem.objective_value(&cand)?;
                let score = f_cand + quarter * alpha * sol.v.norm_squared();
                let better = match &best {
                    None => true,
                    Some((_, _, _, best_score)) => score < *best_score,
                };
                if better {
                    best = Some((i, f_cand, cand, score));
                }
            }
            let (sel, f_sel, point_sel, _) = best.expect("at least one active piece");

            // Composite acceptance against every active piece.
            let v_sel_sq = sols[sel].v.norm_squared();
            let mut margin = f64::INFINITY;
            let mut accept = true;
            for (i, sol) in sols.iter().enumerate() {
                let threshold = f_x + (h2_ref - pieces[i].value)
                    - quarter * alpha * (v_sel_sq + sol.v.norm_squared());
                let this_margin = threshold - f_sel;
                margin = margin.min(this_margin);
                if f_sel > threshold + slack {
                    accept = false;
                    break;
                }
            }

            if accept {
                let k = log.len() + 1;
                let (next, f_next) = refreshed(problem, point_sel, f_sel, k)?;
                let sel_residual_sq = v_sel_sq / (t * t);
                log.push(IterateRecord {
                    k,
                    f_value: f_next,
                    v_norm: v_sel_sq.sqrt(),
                    alpha,
                    t,
                    backtracks: m,
                    active_pieces: pieces.len(),
                    inner_iterations: inner_total,
                    descent_margin: margin,
                    wall_time_s: started.elapsed().as_secs_f64(),
                });
                x = next;
                f_x = f_next;
                warm = Some(sols[sel].dual.clone());

                if sel_residual_sq < vtol {
                    termination = TerminationReason::Tolerance;
                    stationarity_residual = sel_residual_sq.sqrt();
                    break 'outer;
                }
                continue 'outer;
            }
            alpha *= cfg.gamma;
        }

        termination = TerminationReason::LineSearchFailure;
        stationarity_residual = max_residual_sq.sqrt();
        break;
    }

    Ok(SolveResult {
        point: x,
        f_value: f_x,
        initial_f,
        iterations: log.len(),
        termination,
        stationarity_residual,
        log,
    })
}
