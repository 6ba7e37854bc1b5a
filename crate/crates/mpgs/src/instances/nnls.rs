//! Nonnegative least squares with one additional free variable:
//! `min_{ζ ≥ 0, γ} ‖Uζ + γx̄ + c‖²`.
//!
//! The free variable is eliminated analytically — for fixed `ζ` the optimal
//! `γ` is `−x̄ᵀ(Uζ + c)/‖x̄‖²`, so the problem collapses to plain NNLS on the
//! data projected off `span{x̄}` — and the reduced problem is solved by the
//! classic active-set method (grow a passive set by the most negative
//! gradient component, solve the unconstrained least squares on it, clip
//! back to the feasible segment when a passive coordinate would go
//! negative). The active-set loop terminates finitely on the exact problem;
//! a generous iteration cap guards against floating-point cycling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Least-squares solution of `M z = rhs` through a singular value
/// decomposition, treating singular values below `1e-12·σ_max` as zero.
/// Works for rank-deficient `M` (returns the min-norm solution on the
/// retained subspace).
fn svd_least_squares(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let eps = 1e-12 * sigma_max.max(f64::MIN_POSITIVE);
    svd.solve(rhs, eps).expect("SVD was computed with both factor sets")
}

/// Solves `min ‖Uζ + γx̄ + c‖²` subject to `ζ ≥ 0` with `γ` unconstrained.
///
/// Returns `(ζ, γ, residual)` where `residual = ‖Uζ + γx̄ + c‖`. The
/// stationarity tolerance `tol` bounds the first-order optimality of the
/// reduced NNLS problem: at return, passive components have gradient
/// magnitude ≤ `tol·scale` and active components have gradient
/// ≥ `−tol·scale`, where `scale = max(1, ‖∇ at ζ=0‖_∞)`.
///
/// Fails with [`Error::NonConverged`] if the active-set loop exceeds its
/// iteration cap (only reachable through floating-point cycling).
pub fn nnls_mixed_solve(
    u: &DMatrix<f64>,
    c: &DVector<f64>,
    xbar: &DVector<f64>,
    tol: f64,
) -> Result<(DVector<f64>, f64, f64)> {
    let rows = u.nrows();
    let cols = u.ncols();
    if c.len() != rows || xbar.len() != rows {
        return Err(Error::dims(format!(
            "operator is {rows}x{cols} but offset has length {} and pivot has length {}",
            c.len(),
            xbar.len()
        )));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidConfig {
            reason: format!("stationarity tolerance must be positive and finite, got {tol}"),
        });
    }

    // Project the columns and the right-hand side off span{x̄}: with
    // P = I − x̄x̄ᵀ/‖x̄‖², the reduced problem is min_{ζ≥0} ‖(PU)ζ − (−Pc)‖².
    // When x̄ = 0 the free variable is vacuous and P = I.
    let xbar_sq = xbar.norm_squared();
    let project = |v: &DVector<f64>| -> DVector<f64> {
        if xbar_sq == 0.0 {
            v.clone()
        } else {
            v - xbar * (xbar.dot(v) / xbar_sq)
        }
    };
    let mut a = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        a.set_column(j, &project(&u.column(j).clone_owned()));
    }
    let b = -project(c);

    let gradient_scale = {
        let g0 = a.tr_mul(&b); // ∇(½‖Aζ−b‖²) at 0 is −Aᵀb; scale off its size
        g0.amax().max(1.0)
    };
    let threshold = tol * gradient_scale;

    let mut zeta = DVector::zeros(cols);
    let mut passive = vec![false; cols];
    let mut residual_vec = &a * &zeta - &b;
    let cap = 6 * cols.max(1) + 20;
    let mut iterations = 0usize;

    loop {
        // Dual feasibility: the most negative gradient among active
        // (zero) coordinates decides whether to grow the passive set.
        let gradient = a.tr_mul(&residual_vec);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..cols {
            if !passive[j] && gradient[j] < -threshold {
                match best {
                    Some((_, g)) if gradient[j] >= g => {}
                    _ => best = Some((j, gradient[j])),
                }
            }
        }
        let Some((enter, _)) = best else {
            break; // KKT satisfied.
        };
        passive[enter] = true;

        // Re-solve on the passive set, clipping back whenever the
        // unconstrained solution leaves the nonnegative orthant.
        loop {
            iterations += 1;
            if iterations > cap {
                return Err(Error::NonConverged {
                    what: "constrained least-squares active-set loop".into(),
                    iterations: cap,
                });
            }
            let support: Vec<usize> = (0..cols).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(support.iter());
            let z_sub = svd_least_squares(&sub, &b);
            if z_sub.iter().all(|&z| z > 0.0) {
                zeta.fill(0.0);
                for (idx, &j) in support.iter().enumerate() {
                    zeta[j] = z_sub[idx];
                }
                break;
            }
            // Longest feasible step from ζ toward z, then drop the
            // coordinates that landed on the boundary.
            let mut alpha = 1.0f64;
            for (idx, &j) in support.iter().enumerate() {
                if z_sub[idx] <= 0.0 {
                    let denom = zeta[j] - z_sub[idx];
                    if denom > 0.0 {
                        alpha = alpha.min(zeta[j] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            for (idx, &j) in support.iter().enumerate() {
                zeta[j] += alpha * (z_sub[idx] - zeta[j]);
                if zeta[j] <= 0.0 || (z_sub[idx] <= 0.0 && zeta[j] < 1e-300) {
                    zeta[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
        residual_vec = &a * &zeta - &b;
    }

    let gamma = if xbar_sq == 0.0 { 0.0 } else { -xbar.dot(&(u * &zeta + c)) / xbar_sq };
    let residual = (u * &zeta + xbar * gamma + c).norm();
    Ok((zeta, gamma, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_vector(n: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
    }

    fn random_matrix(n: usize, m: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn zero_offset_is_solved_by_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let u = random_matrix(4, 4, &mut rng);
        let xbar = random_vector(4, &mut rng);
        let c = DVector::zeros(4);
        let (zeta, gamma, residual) = nnls_mixed_solve(&u, &c, &xbar, 1e-12).unwrap();
        assert_eq!(zeta, DVector::zeros(4));
        assert_eq!(gamma, 0.0);
        assert_eq!(residual, 0.0);
    }

    /// Exhaustive oracle for 2 columns: try every sign pattern (support
    /// subset), solve the unconstrained least squares with the free
    /// variable appended, keep the best feasible candidate.
    fn brute_force_residual(u: &DMatrix<f64>, c: &DVector<f64>, xbar: &DVector<f64>) -> f64 {
        let n = u.nrows();
        let mut best = f64::INFINITY;
        for pattern in 0..4u8 {
            let support: Vec<usize> = (0..2).filter(|j| pattern & (1 << j) != 0).collect();
            let mut m = DMatrix::zeros(n, support.len() + 1);
            for (idx, &j) in support.iter().enumerate() {
                m.set_column(idx, &u.column(j).clone_owned());
            }
            m.set_column(support.len(), xbar);
            let sol = svd_least_squares(&m, &(-c));
            if sol.iter().take(support.len()).any(|&z| z < 0.0) {
                continue;
            }
            let mut zeta = DVector::zeros(2);
            for (idx, &j) in support.iter().enumerate() {
                zeta[j] = sol[idx];
            }
            let r = (u * &zeta + xbar * sol[support.len()] + c).norm();
            best = best.min(r);
        }
        best
    }

    #[test]
    fn two_column_problems_match_the_exhaustive_oracle() {
        for seed in 0..40 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let u = random_matrix(2, 2, &mut rng);
            let c = random_vector(2, &mut rng);
            let xbar = random_vector(2, &mut rng);
            let (_, _, residual) = nnls_mixed_solve(&u, &c, &xbar, 1e-12).unwrap();
            let oracle = brute_force_residual(&u, &c, &xbar);
            assert!(
                residual <= oracle + 1e-10,
                "seed {seed}: solver residual {residual:.12e} vs oracle {oracle:.12e}"
            );
        }
    }

    #[test]
    fn first_order_conditions_hold_at_the_solution() {
        for seed in 0..20 {
            let mut rng = ChaCha12Rng::seed_from_u64(100 + seed);
            let u = random_matrix(8, 8, &mut rng);
            let c = random_vector(8, &mut rng);
            let xbar = random_vector(8, &mut rng);
            let (zeta, gamma, _) = nnls_mixed_solve(&u, &c, &xbar, 1e-12).unwrap();
            let r = &u * &zeta + &xbar * gamma + &c;
            // Free variable: exact stationarity.
            assert!(xbar.dot(&r).abs() <= 1e-10 * r.norm().max(1.0), "seed {seed}");
            // Constrained variables: zero gradient on the support,
            // nonnegative gradient off it.
            let grad = u.tr_mul(&r);
            let scale = grad.amax().max(1.0);
            for j in 0..8 {
                if zeta[j] > 0.0 {
                    assert!(
                        grad[j].abs() <= 1e-8 * scale,
                        "seed {seed}: support gradient {:.3e}",
                        grad[j]
                    );
                } else {
                    assert!(
                        grad[j] >= -1e-8 * scale,
                        "seed {seed}: active gradient {:.3e}",
                        grad[j]
                    );
                }
            }
        }
    }

    #[test]
    fn consistent_nonnegative_systems_reach_zero_residual() {
        // Build c = −(Uζ* + γ*x̄) from a known nonnegative ζ*; the solver
        // must drive the residual to rounding level.
        for seed in 0..10 {
            let mut rng = ChaCha12Rng::seed_from_u64(200 + seed);
            let u = random_matrix(6, 6, &mut rng);
            let xbar = random_vector(6, &mut rng);
            let mut zeta_star = random_vector(6, &mut rng);
            zeta_star.apply(|z| *z = z.abs());
            let c = -(&u * &zeta_star + &xbar * 0.7);
            let (_, _, residual) = nnls_mixed_solve(&u, &c, &xbar, 1e-12).unwrap();
            assert!(residual <= 1e-10, "seed {seed}: residual {residual:.3e}");
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let u = DMatrix::<f64>::identity(3, 3);
        let c = DVector::zeros(3);
        let xbar = DVector::zeros(3);
        assert!(nnls_mixed_solve(&u, &c, &xbar, 0.0).is_err());
        assert!(nnls_mixed_solve(&u, &c, &xbar, -1.0).is_err());
        let short = DVector::zeros(2);
        assert!(nnls_mixed_solve(&u, &short, &xbar, 1e-12).is_err());
    }

    #[test]
    fn degenerate_pivot_reduces_to_plain_nnls() {
        // x̄ = 0 removes the free variable; the solver must still satisfy
        // the NNLS optimality conditions.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let u = random_matrix(5, 5, &mut rng);
        let c = random_vector(5, &mut rng);
        let xbar = DVector::zeros(5);
        let (zeta, gamma, residual) = nnls_mixed_solve(&u, &c, &xbar, 1e-12).unwrap();
        assert_eq!(gamma, 0.0);
        assert!(residual.is_finite());
        let grad = u.tr_mul(&(&u * &zeta + &c));
        for j in 0..5 {
            if zeta[j] > 0.0 {
                assert!(grad[j].abs() <= 1e-8 * grad.amax().max(1.0));
            } else {
                assert!(grad[j] >= -1e-8 * grad.amax().max(1.0));
            }
        }
    }
}
