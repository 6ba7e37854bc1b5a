//! Acceptance gate: every shipping requirement verified end to end, one
//! `[PASS]`/`[FAIL]` line per criterion on stdout (run with
//! `cargo test -p mpgs --test acceptance -- --nocapture` to watch).
//!
//! The nine criteria run sequentially inside one test so each wall-clock
//! budget is measured without contention from sibling tests.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use mpgs::experiments::{run_exp1, run_exp2, Exp1Options, Exp2Options};
use mpgs::instances::{gen_critical_instance, random_sgep, SgepInstance};
use mpgs::manifolds::Stiefel;
use mpgs::objective::topk_active_pieces;
use mpgs::objective::ProxTerm;
use mpgs::solvers::{empgsa_solve, mpgsa_solve, SolveResult, SolverConfig};
use mpgs::stationarity::{critical_residual, default_probe_t, lifted_b_residual};
use mpgs::subproblem::{
    default_inner_tolerance, solve_dual_fista, solve_ssn_l1, TangentSubproblem,
};

/// Collects criterion outcomes and prints one line per criterion.
struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn criterion(
        &mut self,
        number: usize,
        label: &str,
        budget_s: f64,
        run: impl FnOnce() -> Result<String, String>,
    ) {
        let started = Instant::now();
        let outcome = run();
        let elapsed = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) if elapsed <= budget_s => {
                println!(
                    "[PASS] criterion {number} ({label}): {detail} [{elapsed:.1}s / {budget_s:.0}s]"
                );
            }
            Ok(detail) => {
                println!(
                    "[FAIL] criterion {number} ({label}): checks passed but wall time \
                     {elapsed:.1}s exceeds the {budget_s:.0}s budget; {detail}"
                );
                self.failures.push(format!("criterion {number}: over time budget"));
            }
            Err(why) => {
                println!("[FAIL] criterion {number} ({label}): {why} [{elapsed:.1}s]");
                self.failures.push(format!("criterion {number}: {why}"));
            }
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Every per-iteration acceptance inequality across a run, checked with a
/// relative slack of `1e-9`.
fn check_descent(result: &SolveResult, context: &str) -> Result<usize, String> {
    for rec in &result.log {
        let slack = -1e-9 * rec.f_value.abs().max(1.0);
        if rec.descent_margin < slack {
            return Err(format!(
                "{context}: iteration {} violates the decrease inequality by {:.3e}",
                rec.k, -rec.descent_margin
            ));
        }
    }
    Ok(result.log.len())
}

/// Criterion 1 — the sufficient-decrease inequality holds on every accepted
/// iteration of both solvers over a matrix of instance shapes and penalties.
fn criterion_1() -> Result<String, String> {
    let cfg = SolverConfig { piece_cap: 100_000, ..SolverConfig::default() };
    let mut iterations = 0usize;
    let mut runs = 0usize;

    let mut check_both = |inst: &SgepInstance, tag: &str| -> Result<(), String> {
        let problem = inst.problem();
        let finite_max = problem.h2().is_finite_max();
        for seed in [1u64, 2] {
            let x0 = problem.manifold().random_point_seeded(seed);
            let result = mpgsa_solve(&problem, &x0, &cfg)
                .map_err(|e| format!("{tag}: single-subproblem solve failed: {e}"))?;
            iterations += check_descent(&result, &format!("{tag}/mpgsa/seed{seed}"))?;
            runs += 1;
            if finite_max {
                let result = empgsa_solve(&problem, &x0, &cfg)
                    .map_err(|e| format!("{tag}: competing-pieces solve failed: {e}"))?;
                iterations += check_descent(&result, &format!("{tag}/empgsa/seed{seed}"))?;
                runs += 1;
            }
        }
        Ok(())
    };

    let l1_small = random_sgep(30, 2, 0.25, None, 11).map_err(|e| e.to_string())?;
    check_both(&l1_small, "l1 n=30 p=2")?;
    let partial_small = random_sgep(30, 2, 0.3, Some(4), 12).map_err(|e| e.to_string())?;
    check_both(&partial_small, "partial n=30 p=2")?;
    let partial_wide = random_sgep(60, 3, 0.15, Some(10), 13).map_err(|e| e.to_string())?;
    check_both(&partial_wide, "partial n=60 p=3")?;
    let constructed = gen_critical_instance(50, 3, 1.2, 21)
        .map_err(|e| e.to_string())?
        .instance()
        .map_err(|e| e.to_string())?;
    check_both(&constructed, "constructed n=50")?;

    Ok(format!(
        "decrease inequality held on all {iterations} iterations across {runs} runs \
         (both solvers, l1 and partial penalties, p in {{1,2,3}})"
    ))
}

/// Criterion 2 — with the penalty off and p = 1, the solver must land on
/// the dominant generalized eigenvalue of a random SPD pencil.
fn criterion_2() -> Result<String, String> {
    let n = 30;
    let cfg = SolverConfig { vtol_scale: 1e-12, ..SolverConfig::default() };
    let mut worst_gap = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(0xE16E_0000 + seed);
        let m = gaussian_matrix(&mut rng, n, n);
        let a = (m.transpose() * &m) / n as f64 + DMatrix::identity(n, n) * 0.5;
        let m = gaussian_matrix(&mut rng, n, n);
        let b = (m.transpose() * &m) / n as f64 + DMatrix::identity(n, n);

        // Dense oracle: λ_max(B⁻¹A) through the Cholesky-whitened pencil.
        let chol = Cholesky::new(b.clone()).ok_or("oracle: pencil is not SPD")?;
        let l = chol.l();
        let linv_a = l
            .solve_lower_triangular(&a)
            .ok_or("oracle: singular Cholesky factor")?;
        let whitened = l
            .solve_lower_triangular(&linv_a.transpose())
            .ok_or("oracle: singular Cholesky factor")?;
        let eig = SymmetricEigen::new(symmetrized(whitened));
        let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let inst = SgepInstance::new(a, b, 0.0, None, 1).map_err(|e| e.to_string())?;
        let problem = inst.problem();
        let x0 = problem.manifold().random_point_seeded(seed.wrapping_mul(7).wrapping_add(1));
        let result = mpgsa_solve(&problem, &x0, &cfg)
            .map_err(|e| format!("seed {seed}: solve failed: {e}"))?;

        let gap = (result.f_value - (-lambda_max)).abs();
        worst_gap = worst_gap.max(gap);
        if gap > 1e-6 {
            return Err(format!(
                "seed {seed}: final objective {:.9e} is {gap:.3e} from the oracle {:.9e}",
                result.f_value, -lambda_max
            ));
        }
    }
    Ok(format!("20/20 seeds within 1e-6 of the dense eigenvalue oracle (worst gap {worst_gap:.2e})"))
}

/// Criterion 3 — the semismooth Newton and dual accelerated-gradient
/// subproblem solvers agree, and both certify descent.
fn criterion_3() -> Result<String, String> {
    let manifold = Stiefel::new(20, 3).map_err(|e| e.to_string())?;
    let tolerance = default_inner_tolerance(&manifold);
    let mut worst_disagreement = 0.0f64;
    for i in 0..100u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(0x5B0B_0000 + i);
        let x = manifold.random_point(&mut rng);
        let w = gaussian_matrix(&mut rng, 20, 3);
        let t = 10f64.powf(rng.random_range(-1.3..0.7));
        let weight = rng.random_range(0.05..0.5);
        let h1 = ProxTerm::l1(weight).map_err(|e| e.to_string())?;
        let sp = TangentSubproblem::new(&manifold, &x, &w, t, &h1).map_err(|e| e.to_string())?;

        let newton = solve_ssn_l1(&sp, tolerance, 200, None)
            .map_err(|e| format!("case {i}: Newton solve failed: {e}"))?;
        let fista = solve_dual_fista(&sp, tolerance, 50_000, None)
            .map_err(|e| format!("case {i}: dual solve failed: {e}"))?;

        let disagreement = (newton.v.as_matrix() - fista.v.as_matrix()).norm();
        worst_disagreement = worst_disagreement.max(disagreement);
        if disagreement > 1e-6 {
            return Err(format!(
                "case {i} (t={t:.3}, weight={weight:.3}): solutions differ by {disagreement:.3e}"
            ));
        }
        for (name, sol) in [("Newton", &newton), ("dual", &fista)] {
            let margin = sp.descent_margin(&sol.v);
            if margin < -1e-9 {
                return Err(format!(
                    "case {i}: {name} solution violates the descent certificate by {:.3e}",
                    -margin
                ));
            }
        }
    }
    Ok(format!(
        "100/100 subproblems: solvers agree to 1e-6 (worst {worst_disagreement:.2e}) and both \
         certify descent"
    ))
}

/// Criterion 4 — constructed-instance benchmark: the competing-pieces
/// solver must separate from the single-subproblem one on optimum hits.
fn criterion_4() -> Result<String, String> {
    let opts = Exp2Options::default();
    assert_eq!((opts.trials, opts.n, opts.topk), (50, 100, 3));
    assert_eq!(opts.lambda, 1.2);
    let (report, _) = run_exp2(&opts).map_err(|e| e.to_string())?;
    let s = &report.summary;

    if s.empgsa.optimum_pct < 90.0 {
        return Err(format!("competing-pieces hit rate {:.1}% is below 90%", s.empgsa.optimum_pct));
    }
    if s.mpgsa.optimum_pct > s.empgsa.optimum_pct - 30.0 {
        return Err(format!(
            "hit-rate separation too small: {:.1}% vs {:.1}%",
            s.mpgsa.optimum_pct, s.empgsa.optimum_pct
        ));
    }
    if s.empgsa.iterations > 15.0 {
        return Err(format!("mean competing-pieces iterations {:.1} exceed 15", s.empgsa.iterations));
    }
    if s.mpgsa.sparsity < 0.95 || s.empgsa.sparsity < 0.95 {
        return Err(format!(
            "mean sparsity below 0.95: {:.3} / {:.3}",
            s.mpgsa.sparsity, s.empgsa.sparsity
        ));
    }
    Ok(format!(
        "hits {:.1}% vs {:.1}%, competing-pieces iterations {:.1}, sparsity {:.3}/{:.3} over 50 trials",
        s.empgsa.optimum_pct, s.mpgsa.optimum_pct, s.empgsa.iterations, s.empgsa.sparsity, s.mpgsa.sparsity
    ))
}

/// Criterion 5 — discriminant benchmark over 10 trials: sparsity band,
/// iteration ordering between the two penalty models, and clean
/// tolerance termination everywhere. Accuracy is reported, not asserted.
fn criterion_5() -> Result<String, String> {
    let opts = Exp1Options { trials: 10, ..Exp1Options::default() };
    let (report, _) = run_exp1(&opts).map_err(|e| e.to_string())?;
    let s = &report.summary;

    if !(0.85..=0.95).contains(&s.l1_mpgsa.sparsity) {
        return Err(format!(
            "mean l1-model sparsity {:.4} is outside [0.85, 0.95]",
            s.l1_mpgsa.sparsity
        ));
    }
    if s.partial_mpgsa.iterations >= s.l1_mpgsa.iterations {
        return Err(format!(
            "partial-penalty model should converge in fewer iterations: {:.1} vs {:.1}",
            s.partial_mpgsa.iterations, s.l1_mpgsa.iterations
        ));
    }
    let max_iter = opts.max_iter;
    for t in &report.trials {
        for (leg, run) in [
            ("l1/mpgsa", &t.l1_mpgsa),
            ("partial/mpgsa", &t.partial_mpgsa),
            ("partial/empgsa", &t.partial_empgsa),
        ] {
            if !run.tolerance_termination || run.iterations >= max_iter {
                return Err(format!(
                    "trial {} leg {leg} did not tolerance-terminate ({} iterations)",
                    t.trial, run.iterations
                ));
            }
        }
    }
    Ok(format!(
        "l1 sparsity {:.4}, iterations {:.1} (l1) vs {:.1} (partial), 30/30 tolerance; \
         accuracy (reported only) {:.3}/{:.3}/{:.3}",
        s.l1_mpgsa.sparsity,
        s.l1_mpgsa.iterations,
        s.partial_mpgsa.iterations,
        s.l1_mpgsa.accuracy,
        s.partial_mpgsa.accuracy,
        s.partial_empgsa.accuracy
    ))
}

/// Criterion 6 — the constructed bundles separate the two stationarity
/// notions: tiny critical residual, macroscopic lifted residual.
fn criterion_6() -> Result<String, String> {
    let mut worst_critical = 0.0f64;
    let mut smallest_lifted = f64::INFINITY;
    for seed in 0..20u64 {
        let bundle = gen_critical_instance(100, 3, 1.2, seed)
            .map_err(|e| format!("seed {seed}: generation failed: {e}"))?;
        let inst = bundle.instance().map_err(|e| e.to_string())?;
        let problem = inst.problem();
        let xbar = DMatrix::from_column_slice(bundle.n(), 1, bundle.xbar.as_slice());
        let x = problem.manifold().point(xbar).map_err(|e| e.to_string())?;
        let t = default_probe_t(&problem, &x);

        let critical = critical_residual(&problem, &x, t).map_err(|e| e.to_string())?;
        let lifted = lifted_b_residual(&problem, &x, t, 1e-8).map_err(|e| e.to_string())?;
        worst_critical = worst_critical.max(critical);
        smallest_lifted = smallest_lifted.min(lifted);
        if critical > 1e-7 {
            return Err(format!("seed {seed}: critical residual {critical:.3e} exceeds 1e-7"));
        }
        if lifted < 1e-3 {
            return Err(format!("seed {seed}: lifted residual {lifted:.3e} below 1e-3"));
        }
    }
    Ok(format!(
        "20/20 bundles separate: critical residual <= {worst_critical:.2e}, lifted residual >= \
         {smallest_lifted:.2e}"
    ))
}

/// Criterion 7 — the polar retraction is a second-order approximation of
/// the straight-line step.
fn criterion_7() -> Result<String, String> {
    let manifold = Stiefel::new(40, 5).map_err(|e| e.to_string())?;
    let steps: Vec<f64> = (0..6).map(|i| 10f64.powf(-1.0 - 0.4 * i as f64)).collect();
    for i in 0..10u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(0x0E7A_0000 + i);
        let x = manifold.random_point(&mut rng);
        let ambient = gaussian_matrix(&mut rng, 40, 5);
        let v = manifold.tangent_project(&x, &ambient).map_err(|e| e.to_string())?;
        let v = v.scaled(1.0 / v.norm());

        let mut ln_t = Vec::with_capacity(steps.len());
        let mut ln_err = Vec::with_capacity(steps.len());
        for &t in &steps {
            let retracted = manifold.retract_polar(&v.scaled(t)).map_err(|e| e.to_string())?;
            let straight = x.as_matrix() + v.as_matrix() * t;
            let err = (retracted.as_matrix() - straight).norm();
            if err <= 1e-14 {
                continue; // below round-off; would pollute the fit
            }
            ln_t.push(t.ln());
            ln_err.push(err.ln());
        }
        if ln_t.len() < 3 {
            return Err(format!("pair {i}: too few usable step sizes for a slope fit"));
        }
        let m = ln_t.len() as f64;
        let tbar = ln_t.iter().sum::<f64>() / m;
        let ebar = ln_err.iter().sum::<f64>() / m;
        let cov: f64 = ln_t.iter().zip(&ln_err).map(|(a, b)| (a - tbar) * (b - ebar)).sum();
        let var: f64 = ln_t.iter().map(|a| (a - tbar) * (a - tbar)).sum();
        let slope = cov / var;
        if (slope - 2.0).abs() > 0.2 {
            return Err(format!("pair {i}: retraction error slope {slope:.3} is not 2.0 +/- 0.2"));
        }
    }
    Ok("10/10 random pairs show second-order retraction error (slope 2.0 +/- 0.2)".into())
}

/// Criterion 8 — analytic gradients of the smooth terms and of every
/// nearly-active penalty piece match central finite differences.
fn criterion_8() -> Result<String, String> {
    let (n, p, k, weight) = (15usize, 2usize, 4usize, 0.3f64);
    let manifold = Stiefel::new(n, p).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut pieces_checked = 0usize;
    let mut worst_rel = 0.0f64;

    for i in 0..20u64 {
        let inst = random_sgep(n, p, weight, Some(k), 0x6D00 + i).map_err(|e| e.to_string())?;
        let problem = inst.problem();
        let x = manifold.random_point_seeded(0x0F0E_0000 + i);
        let xm = x.as_matrix();

        let mut check_term = |name: &str,
                              value: &dyn Fn(&DMatrix<f64>) -> f64,
                              grad: DMatrix<f64>|
         -> Result<(), String> {
            let mut fd = DMatrix::zeros(n, p);
            for r in 0..n {
                for c in 0..p {
                    let mut plus = xm.clone();
                    plus[(r, c)] += h;
                    let mut minus = xm.clone();
                    minus[(r, c)] -= h;
                    fd[(r, c)] = (value(&plus) - value(&minus)) / (2.0 * h);
                }
            }
            let rel = (&fd - &grad).norm() / grad.norm().max(1.0);
            worst_rel = worst_rel.max(rel);
            if rel > 1e-5 {
                return Err(format!(
                    "point {i}: {name} gradient differs from finite differences by {rel:.3e}"
                ));
            }
            Ok(())
        };

        let f = problem.f_term().clone();
        check_term("numerator", &|y| f.value(y), f.subgradient(xm))?;
        let g = problem.g_term().clone();
        check_term("denominator", &|y| g.value(y), g.gradient(xm))?;

        let pieces =
            topk_active_pieces(xm, k, weight, 0.02, 10_000).map_err(|e| e.to_string())?;
        for (j, piece) in pieces.iter().enumerate() {
            let name = format!("piece {j}");
            check_term(&name, &|y| piece.value_at(y, weight), piece.gradient(n, p, weight))?;
            pieces_checked += 1;
        }
    }
    Ok(format!(
        "numerator, denominator, and {pieces_checked} penalty pieces match finite differences \
         at 20 feasible points (worst relative error {worst_rel:.2e})"
    ))
}

/// Criterion 9 — seeded experiment reports are a pure function of their
/// options: identical across repeat runs and across worker-pool sizes.
/// (The installed binary is checked the same way, file-level, in the
/// driver crate's test suite.)
fn criterion_9() -> Result<String, String> {
    let opts = Exp2Options { trials: 5, base_seed: 7, ..Exp2Options::default() };
    let mut serialized = Vec::new();
    for threads in [1usize, 2, 4, 1] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| format!("cannot build a {threads}-thread pool: {e}"))?;
        let (report, _) = pool
            .install(|| run_exp2(&opts))
            .map_err(|e| format!("{threads}-thread run failed: {e}"))?;
        let json = serde_json::to_string(&report).map_err(|e| e.to_string())?;
        serialized.push((threads, json));
    }
    let (_, reference) = &serialized[0];
    for (threads, json) in &serialized[1..] {
        if json != reference {
            return Err(format!(
                "report from a {threads}-thread pool differs from the 1-thread reference"
            ));
        }
    }
    Ok("reports byte-identical across repeat runs and 1/2/4-thread pools".into())
}

#[test]
fn acceptance_gate() {
    let mut gate = Gate { failures: Vec::new() };
    gate.criterion(1, "descent invariant", 120.0, criterion_1);
    gate.criterion(2, "eigenvalue oracle", 5.0, criterion_2);
    gate.criterion(3, "subproblem oracle equivalence", 30.0, criterion_3);
    gate.criterion(4, "constructed-instance benchmark", 120.0, criterion_4);
    gate.criterion(5, "discriminant benchmark", 1800.0, criterion_5);
    gate.criterion(6, "stationarity separation", 60.0, criterion_6);
    gate.criterion(7, "retraction order", 1.0, criterion_7);
    gate.criterion(8, "gradient checks", 5.0, criterion_8);
    gate.criterion(9, "determinism", 120.0, criterion_9);
    assert!(
        gate.failures.is_empty(),
        "acceptance gate failed:\n{}",
        gate.failures.join("\n")
    );
}
