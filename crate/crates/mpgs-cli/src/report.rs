//! Report emission: CSV/JSON files, run-metadata sidecars, and the human
//! tables printed on stdout.
//!
//! Report files are deterministic functions of the run configuration —
//! nothing timing- or host-dependent goes into them. Wall-clock numbers and
//! thread counts live in a `<out>.meta.json` sidecar instead, so re-running
//! a seeded experiment reproduces the report byte for byte.
//!
//! CSV conventions: floats are written in scientific notation with 17
//! significant digits (lossless `f64` round trip); booleans are written as
//! `1`/`0` so the aggregate rows (`trial = mean`) can carry their means in
//! the same numeric columns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mpgs::experiments::{Exp1Report, Exp1Timing, Exp2Report, Exp2Timing};
use mpgs::solvers::IterateRecord;
use serde::Serialize;

use crate::CliError;

/// Scientific notation with 17 significant digits: parses back to the same
/// `f64` bit pattern.
pub fn full(v: f64) -> String {
    format!("{v:.16e}")
}

fn bool01(b: bool) -> &'static str {
    if b { "1" } else { "0" }
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::usage(format!("cannot write '{}': {e}", path.display()))
}

/// Serializes anything to pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| file_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| file_err(path, e))?;
    w.write_all(b"\n").map_err(|e| file_err(path, e))?;
    w.flush().map_err(|e| file_err(path, e))
}

/// Sidecar path carrying the non-deterministic run facts: `<out>.meta.json`.
pub fn meta_path(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.meta.json", out.display()))
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    created_unix_s: u64,
    threads: usize,
    wall: serde_json::Value,
}

/// Writes the metadata sidecar next to `out`.
pub fn write_meta(out: &Path, command: &str, wall: serde_json::Value) -> Result<(), CliError> {
    let created_unix_s =
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = RunMeta { command, created_unix_s, threads: rayon::current_num_threads(), wall };
    write_json(&meta_path(out), &meta)
}

/// Per-iteration solver log as CSV. Wall times are deliberately excluded
/// (they belong in the metadata sidecar); all other fields of each iterate
/// record appear as one row.
pub fn write_iterate_csv(path: &Path, log: &[IterateRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    w.write_record([
        "k",
        "f_value",
        "v_norm",
        "alpha",
        "t",
        "backtracks",
        "active_pieces",
        "inner_iterations",
        "descent_margin",
    ])
    .map_err(|e| file_err(path, e))?;
    for r in log {
        w.write_record([
            r.k.to_string(),
            full(r.f_value),
            full(r.v_norm),
            full(r.alpha),
            full(r.t),
            r.backtracks.to_string(),
            r.active_pieces.to_string(),
            r.inner_iterations.to_string(),
            full(r.descent_margin),
        ])
        .map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

const EXP1_HEADER: [&str; 9] = [
    "trial",
    "seed",
    "model",
    "solver",
    "objective",
    "iterations",
    "sparsity",
    "accuracy",
    "tolerance_termination",
];

/// Discriminant benchmark as CSV: three rows per trial (model/solver leg),
/// then three `trial = mean` rows with the column means.
pub fn write_exp1_csv(path: &Path, report: &Exp1Report) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    w.write_record(EXP1_HEADER).map_err(|e| file_err(path, e))?;
    for t in &report.trials {
        for (model, solver, run) in [
            ("l1", "mpgsa", &t.l1_mpgsa),
            ("partial", "mpgsa", &t.partial_mpgsa),
            ("partial", "empgsa", &t.partial_empgsa),
        ] {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                model.to_string(),
                solver.to_string(),
                full(run.objective),
                run.iterations.to_string(),
                full(run.sparsity),
                full(run.accuracy),
                bool01(run.tolerance_termination).to_string(),
            ])
            .map_err(|e| file_err(path, e))?;
        }
    }
    let trials = report.trials.len().max(1) as f64;
    for (model, solver, means, tol_mean) in [
        (
            "l1",
            "mpgsa",
            &report.summary.l1_mpgsa,
            report.trials.iter().filter(|t| t.l1_mpgsa.tolerance_termination).count() as f64
                / trials,
        ),
        (
            "partial",
            "mpgsa",
            &report.summary.partial_mpgsa,
            report.trials.iter().filter(|t| t.partial_mpgsa.tolerance_termination).count() as f64
                / trials,
        ),
        (
            "partial",
            "empgsa",
            &report.summary.partial_empgsa,
            report.trials.iter().filter(|t| t.partial_empgsa.tolerance_termination).count() as f64
                / trials,
        ),
    ] {
        w.write_record([
            "mean".to_string(),
            String::new(),
            model.to_string(),
            solver.to_string(),
            full(means.objective),
            full(means.iterations),
            full(means.sparsity),
            full(means.accuracy),
            full(tol_mean),
        ])
        .map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

const EXP2_HEADER: [&str; 9] = [
    "trial",
    "seed",
    "solver",
    "global_opt",
    "objective",
    "optimum_hit",
    "iterations",
    "sparsity",
    "tolerance_termination",
];

/// Constructed-instance benchmark as CSV: two rows per trial (one per
/// solver), then two `trial = mean` rows. In the mean rows `optimum_hit`
/// carries the hit fraction (hit percentage / 100).
pub fn write_exp2_csv(path: &Path, report: &Exp2Report) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    w.write_record(EXP2_HEADER).map_err(|e| file_err(path, e))?;
    for t in &report.trials {
        for (solver, run) in [("mpgsa", &t.mpgsa), ("empgsa", &t.empgsa)] {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                solver.to_string(),
                full(t.global_opt),
                full(run.objective),
                bool01(run.optimum_hit).to_string(),
                run.iterations.to_string(),
                full(run.sparsity),
                bool01(run.tolerance_termination).to_string(),
            ])
            .map_err(|e| file_err(path, e))?;
        }
    }
    let trials = report.trials.len().max(1) as f64;
    let global_mean =
        report.trials.iter().map(|t| t.global_opt).sum::<f64>() / trials;
    for (solver, means, tol_mean) in [
        (
            "mpgsa",
            &report.summary.mpgsa,
            report.trials.iter().filter(|t| t.mpgsa.tolerance_termination).count() as f64 / trials,
        ),
        (
            "empgsa",
            &report.summary.empgsa,
            report.trials.iter().filter(|t| t.empgsa.tolerance_termination).count() as f64
                / trials,
        ),
    ] {
        w.write_record([
            "mean".to_string(),
            String::new(),
            solver.to_string(),
            full(global_mean),
            full(means.objective),
            full(means.optimum_pct / 100.0),
            full(means.iterations),
            full(means.sparsity),
            full(tol_mean),
        ])
        .map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

fn mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    values.sum::<f64>() / count.max(1) as f64
}

/// Prints the discriminant-benchmark means as an aligned stdout table.
pub fn print_exp1_table(report: &Exp1Report, timings: &[Exp1Timing]) {
    let o = &report.options;
    println!(
        "discriminant benchmark: {} trials, lambda_l1={}, lambda_partial={}, topk={}, p={}",
        o.trials, o.lambda_l1, o.lambda_partial, o.topk, o.p
    );
    println!(
        "mean instance generation: {:.2} s",
        mean(timings.iter().map(|t| t.generate_s), timings.len())
    );
    println!();
    println!(
        "{:<9}{:<9}{:>9}{:>15}{:>11}{:>11}{:>13}",
        "model", "solver", "time(s)", "objective", "accuracy", "sparsity", "iterations"
    );
    let rows = [
        ("l1", "mpgsa", &report.summary.l1_mpgsa, mean(timings.iter().map(|t| t.l1_mpgsa_s), timings.len())),
        ("partial", "mpgsa", &report.summary.partial_mpgsa, mean(timings.iter().map(|t| t.partial_mpgsa_s), timings.len())),
        ("partial", "empgsa", &report.summary.partial_empgsa, mean(timings.iter().map(|t| t.partial_empgsa_s), timings.len())),
    ];
    for (model, solver, m, secs) in rows {
        println!(
            "{:<9}{:<9}{:>9.2}{:>15.6}{:>11.4}{:>11.4}{:>13.1}",
            model, solver, secs, m.objective, m.accuracy, m.sparsity, m.iterations
        );
    }
}

/// Prints the constructed-instance benchmark means as an aligned stdout table.
pub fn print_exp2_table(report: &Exp2Report, timings: &[Exp2Timing]) {
    let o = &report.options;
    println!(
        "constructed-instance benchmark: {} trials, n={}, topk={}, lambda={}",
        o.trials, o.n, o.topk, o.lambda
    );
    println!(
        "mean instance generation: {:.3} s",
        mean(timings.iter().map(|t| t.generate_s), timings.len())
    );
    println!();
    println!(
        "{:<9}{:>9}{:>15}{:>10}{:>11}{:>13}",
        "solver", "time(s)", "objective", "optimum%", "sparsity", "iterations"
    );
    let rows = [
        ("mpgsa", &report.summary.mpgsa, mean(timings.iter().map(|t| t.mpgsa_s), timings.len())),
        ("empgsa", &report.summary.empgsa, mean(timings.iter().map(|t| t.empgsa_s), timings.len())),
    ];
    for (solver, m, secs) in rows {
        println!(
            "{:<9}{:>9.3}{:>15.6}{:>10.1}{:>11.4}{:>13.1}",
            solver, secs, m.objective, m.optimum_pct, m.sparsity, m.iterations
        );
    }
}
