//! `mpgs` — command-line driver for the manifold proximal solvers.
//!
//! Subcommands: `solve` runs one solver on a saved instance, `exp1` and
//! `exp2` run the two benchmark suites, `check` evaluates stationarity
//! residuals at a saved point, and `gen` writes datasets and instances to
//! disk.
//!
//! Exit codes are a stable contract:
//!
//! * `0` — success (`solve`: tolerance termination; experiments: every leg
//!   tolerance-terminated)
//! * `1` — usage, configuration, or I/O error
//! * `2` — an iteration cap was hit
//! * `3` — solver failure (line search stalled, nearly-active piece
//!   enumeration exceeded its cap, numerical breakdown)
//!
//! Every subcommand also honors `--config PATH`, a flat `key = value` file
//! layered beneath the flags, and the `MPGS_THREADS` environment variable,
//! which sizes the worker pool used by the experiment drivers.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use mpgs::experiments::{run_exp1, run_exp2, solve_by_name, Exp1Options, Exp2Options};
use mpgs::instances::{gen_critical_instance, gen_sfda, io as inst_io, random_sgep, sparsity_fraction};
use mpgs::solvers::{SolveResult, SolverConfig, TerminationReason};
use mpgs::{stationarity_report, tol, Error as LibError, StationarityReport};

mod config;
mod report;

use config::{pick, pick_required, FileConfig};

/// Failures the driver distinguishes by exit code: usage, configuration, or
/// I/O problems (exit 1) versus solver breakdown (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<LibError> for CliError {
    fn from(e: LibError) -> Self {
        match e {
            LibError::Io(_)
            | LibError::Csv(_)
            | LibError::Format { .. }
            | LibError::InvalidConfig { .. }
            | LibError::InvalidDimensions { .. }
            | LibError::InvalidInstance { .. }
            | LibError::OffManifold { .. } => CliError::Usage(e.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }
}

/// Prefixes a library error with the file it arose from.
fn in_file(path: &std::path::Path, e: LibError) -> CliError {
    match CliError::from(e) {
        CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
        CliError::Solver(msg) => CliError::Solver(format!("{}: {msg}", path.display())),
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SolverKind {
    /// Single-subproblem method (one tangent step per iteration).
    Mpgsa,
    /// Competing-pieces method (one subproblem per nearly-active piece).
    Empgsa,
}

impl SolverKind {
    fn name(self) -> &'static str {
        match self {
            SolverKind::Mpgsa => "mpgsa",
            SolverKind::Empgsa => "empgsa",
        }
    }
}

impl FromStr for SolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mpgsa" => Ok(SolverKind::Mpgsa),
            "empgsa" => Ok(SolverKind::Empgsa),
            other => Err(format!("expected 'mpgsa' or 'empgsa', got '{other}'")),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("expected 'csv' or 'json', got '{other}'")),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum GenKind {
    /// Synthetic three-class classification dataset (train/test splits).
    Sfda,
    /// Constructed instance with a certified spurious critical point.
    Critical,
    /// Random trace-ratio instance on a random SPD pencil.
    Sgep,
}

impl FromStr for GenKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sfda" => Ok(GenKind::Sfda),
            "critical" => Ok(GenKind::Critical),
            "sgep" => Ok(GenKind::Sgep),
            other => Err(format!("expected 'sfda', 'critical', or 'sgep', got '{other}'")),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mpgs",
    version,
    about = "Manifold proximal solvers: single solves, benchmarks, stationarity checks",
    disable_help_subcommand = true
)]
struct Cli {
    /// Flat `key = value` configuration file; explicit flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver on a saved instance.
    Solve(SolveArgs),
    /// Sparse discriminant-analysis benchmark (three solver/model legs per trial).
    Exp1(Exp1Args),
    /// Constructed-instance benchmark against known global optima.
    Exp2(Exp2Args),
    /// Stationarity residuals and verdicts at a saved point.
    Check(CheckArgs),
    /// Generate datasets and instances and save them to disk.
    Gen(GenArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Saved instance container (written by `gen`).
    #[arg(long, value_name = "PATH")]
    instance: Option<PathBuf>,
    /// Which solver to run [default: mpgsa].
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    /// Seed for the random start frame [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Start frame as a headerless CSV matrix; defaults to a seeded random
    /// feasible point.
    #[arg(long, value_name = "PATH")]
    x0: Option<PathBuf>,
    /// Outer iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Nearly-active piece band half-width for the competing-pieces solver.
    #[arg(long)]
    eta: Option<f64>,
    /// Cap on enumerated nearly-active pieces.
    #[arg(long)]
    piece_cap: Option<usize>,
    /// Termination scale: stop when ||v||^2/t^2 < vtol_scale * n * p.
    #[arg(long)]
    vtol_scale: Option<f64>,
    /// Output file: per-iteration CSV log or JSON summary, plus
    /// `<out>.solution.csv` and `<out>.meta.json`.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format [default: csv].
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct Exp1Args {
    /// Number of trials [default: 50].
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial i uses seed base + i [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// l1 penalty weight [default: 0.21].
    #[arg(long)]
    lambda: Option<f64>,
    /// Partial-penalty weight [default: 0.22].
    #[arg(long)]
    lambda_partial: Option<f64>,
    /// Number of largest magnitudes excluded by the partial penalty [default: 50].
    #[arg(long)]
    topk: Option<usize>,
    /// Number of discriminant directions [default: 3].
    #[arg(long)]
    p: Option<usize>,
    /// Outer iteration cap per solve [default: 10000].
    #[arg(long)]
    max_iter: Option<usize>,
    /// Nearly-active piece band half-width for the competing-pieces leg.
    #[arg(long)]
    eta: Option<f64>,
    /// Entrywise perturbation applied to the shared start frame [default: 0.03].
    #[arg(long)]
    start_noise: Option<f64>,
    /// Report file (plus `<out>.meta.json`).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Report format [default: csv].
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct Exp2Args {
    /// Number of trials [default: 50].
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial i uses seed base + i [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Ambient dimension of the constructed instances [default: 100].
    #[arg(long)]
    n: Option<usize>,
    /// Number of largest magnitudes excluded by the partial penalty [default: 3].
    #[arg(long)]
    topk: Option<usize>,
    /// Penalty weight [default: 1.2].
    #[arg(long)]
    lambda: Option<f64>,
    /// Outer iteration cap per solve [default: 10000].
    #[arg(long)]
    max_iter: Option<usize>,
    /// Nearly-active piece band half-width for the competing-pieces leg.
    #[arg(long)]
    eta: Option<f64>,
    /// Report file (plus `<out>.meta.json`).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Report format [default: csv].
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct CheckArgs {
    /// Saved instance container; requires --point.
    #[arg(long, value_name = "PATH")]
    instance: Option<PathBuf>,
    /// Saved constructed-instance bundle; --point defaults to its certified
    /// critical point.
    #[arg(long, value_name = "PATH")]
    bundle: Option<PathBuf>,
    /// Point to check, as a headerless CSV matrix.
    #[arg(long, value_name = "PATH")]
    point: Option<PathBuf>,
    /// Probe step size; defaults to the instance's adaptive step at the point.
    #[arg(long)]
    probe_t: Option<f64>,
    /// Nearly-active piece band half-width [default: 1e-8].
    #[arg(long)]
    eta: Option<f64>,
    /// Residual threshold for the yes/no verdicts; defaults to ten times the
    /// solver's own termination residual for the instance size.
    #[arg(long)]
    threshold: Option<f64>,
    /// JSON report file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// What to generate.
    #[arg(long, value_enum)]
    kind: Option<GenKind>,
    /// Output file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Generator seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Ambient dimension (critical, sgep) [default: 100].
    #[arg(long)]
    n: Option<usize>,
    /// Number of columns of the frame (sgep) [default: 3].
    #[arg(long)]
    p: Option<usize>,
    /// Number of largest magnitudes excluded by the partial penalty
    /// (critical: default 3; sgep: plain l1 penalty when omitted).
    #[arg(long)]
    topk: Option<usize>,
    /// Penalty weight (critical: default 1.2; sgep: default 0.21).
    #[arg(long)]
    lambda: Option<f64>,
    /// `--format csv` additionally exports a generated sfda dataset's splits
    /// as `<out stem>_train.csv` / `<out stem>_test.csv`.
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return match kind {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    init_threads()?;
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::empty(),
    };
    match cli.command {
        Command::Solve(a) => cmd_solve(a, &file),
        Command::Exp1(a) => cmd_exp1(a, &file),
        Command::Exp2(a) => cmd_exp2(a, &file),
        Command::Check(a) => cmd_check(a, &file),
        Command::Gen(a) => cmd_gen(a, &file),
    }
}

/// Sizes the global worker pool from `MPGS_THREADS` before any parallel
/// region runs. Unset or empty means the library default (one worker per
/// core).
fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("MPGS_THREADS") else { return Ok(()) };
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(());
    }
    let n: usize = raw
        .parse()
        .map_err(|e| CliError::usage(format!("MPGS_THREADS='{raw}' is not a thread count: {e}")))?;
    if n == 0 {
        return Err(CliError::usage("MPGS_THREADS must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot size the worker pool: {e}")))?;
    log::debug!("worker pool sized to {n} threads");
    Ok(())
}

fn solve_summary(
    solver: SolverKind,
    result: &SolveResult,
    sparsity: f64,
    stationarity: Option<&StationarityReport>,
) -> serde_json::Value {
    serde_json::json!({
        "solver": solver.name(),
        "objective": result.f_value,
        "initial_objective": result.initial_f,
        "iterations": result.iterations,
        "termination": result.termination.to_string(),
        "final_residual": result.stationarity_residual,
        "sparsity": sparsity,
        "stationarity": stationarity,
        "log": result.log.iter().map(|r| serde_json::json!({
            "k": r.k,
            "f_value": r.f_value,
            "v_norm": r.v_norm,
            "alpha": r.alpha,
            "t": r.t,
            "backtracks": r.backtracks,
            "active_pieces": r.active_pieces,
            "inner_iterations": r.inner_iterations,
            "descent_margin": r.descent_margin,
        })).collect::<Vec<_>>(),
    })
}

fn cmd_solve(a: SolveArgs, file: &FileConfig) -> Result<ExitCode, CliError> {
    let instance_path: PathBuf = pick_required(a.instance, file.get("instance")?, "instance")?;
    let solver = pick(a.solver, file.get("solver")?, SolverKind::Mpgsa);
    let seed = pick(a.seed, file.get("seed")?, 0);
    let out: Option<PathBuf> = a.out.or(file.get("out")?);
    let format = pick(a.format, file.get("format")?, ReportFormat::Csv);

    let defaults = SolverConfig::default();
    let cfg = SolverConfig {
        max_iter: pick(a.max_iter, file.get("max_iter")?, defaults.max_iter),
        eta: pick(a.eta, file.get("eta")?, defaults.eta),
        piece_cap: pick(a.piece_cap, file.get("piece_cap")?, defaults.piece_cap),
        vtol_scale: pick(a.vtol_scale, file.get("vtol_scale")?, defaults.vtol_scale),
        seed,
        ..defaults
    };

    let inst = inst_io::load_sgep(&instance_path).map_err(|e| in_file(&instance_path, e))?;
    let problem = inst.problem();
    let x0 = match a.x0.or(file.get("x0")?) {
        Some(path) => {
            let m = inst_io::read_matrix_csv(&path).map_err(|e| in_file(&path, e))?;
            if m.nrows() != inst.n() || m.ncols() != inst.p() {
                return Err(CliError::usage(format!(
                    "start frame is {}x{} but the instance needs {}x{}",
                    m.nrows(),
                    m.ncols(),
                    inst.n(),
                    inst.p()
                )));
            }
            problem.manifold().point(m)?
        }
        None => problem.manifold().random_point_seeded(seed),
    };

    let started = Instant::now();
    let result = solve_by_name(solver.name(), &problem, &x0, &cfg)?;
    let wall_s = started.elapsed().as_secs_f64();

    let sparsity = sparsity_fraction(result.point.as_matrix(), tol::SPARSITY_SCALE);
    let stationarity = match stationarity_report(&problem, &result.point, None, cfg.eta) {
        Ok(rep) => Some(rep),
        Err(LibError::PieceCapExceeded { .. }) => None,
        Err(e) => return Err(e.into()),
    };

    println!("solver        {}", solver.name());
    println!("objective     {:.12e}  (started at {:.12e})", result.f_value, result.initial_f);
    println!("iterations    {}  ({})", result.iterations, result.termination);
    println!("wall time     {wall_s:.3} s");
    println!("sparsity      {sparsity:.4}");
    println!("residual      {:.3e}  (final ||v||/t)", result.stationarity_residual);
    match &stationarity {
        Some(rep) => {
            println!(
                "critical      {:.3e}  at probe t = {:.3e}",
                rep.critical_residual, rep.probe_t
            );
            match rep.lifted_b_residual {
                Some(r) => {
                    println!("lifted        {:.3e}  over {} nearly-active pieces", r, rep.active_pieces)
                }
                None => println!("lifted        n/a (objective has no finite-max term)"),
            }
        }
        None => println!("critical      skipped: nearly-active piece family exceeds the cap"),
    }

    if let Some(out) = &out {
        match format {
            ReportFormat::Csv => report::write_iterate_csv(out, &result.log)?,
            ReportFormat::Json => report::write_json(
                out,
                &solve_summary(solver, &result, sparsity, stationarity.as_ref()),
            )?,
        }
        let solution_path = PathBuf::from(format!("{}.solution.csv", out.display()));
        inst_io::write_matrix_csv(&solution_path, result.point.as_matrix())?;
        report::write_meta(
            out,
            "solve",
            serde_json::json!({
                "total_s": wall_s,
                "per_iteration_s": result.log.iter().map(|r| r.wall_time_s).collect::<Vec<_>>(),
            }),
        )?;
        println!(
            "wrote {}, {}, {}",
            out.display(),
            solution_path.display(),
            report::meta_path(out).display()
        );
    }

    Ok(match result.termination {
        TerminationReason::Tolerance => ExitCode::SUCCESS,
        TerminationReason::MaxIter => ExitCode::from(2),
        TerminationReason::LineSearchFailure => ExitCode::from(3),
    })
}

fn cmd_exp1(a: Exp1Args, file: &FileConfig) -> Result<ExitCode, CliError> {
    let d = Exp1Options::default();
    let opts = Exp1Options {
        trials: pick(a.trials, file.get("trials")?, d.trials),
        base_seed: pick(a.seed, file.get("seed")?, d.base_seed),
        lambda_l1: pick(a.lambda, file.get("lambda")?, d.lambda_l1),
        lambda_partial: pick(a.lambda_partial, file.get("lambda_partial")?, d.lambda_partial),
        topk: pick(a.topk, file.get("topk")?, d.topk),
        p: pick(a.p, file.get("p")?, d.p),
        max_iter: pick(a.max_iter, file.get("max_iter")?, d.max_iter),
        eta: pick(a.eta, file.get("eta")?, d.eta),
        start_noise: pick(a.start_noise, file.get("start_noise")?, d.start_noise),
    };
    let out: Option<PathBuf> = a.out.or(file.get("out")?);
    let format = pick(a.format, file.get("format")?, ReportFormat::Csv);

    let started = Instant::now();
    let (rep, timings) = run_exp1(&opts)?;
    let total_s = started.elapsed().as_secs_f64();
    report::print_exp1_table(&rep, &timings);
    println!("total wall time: {total_s:.1} s");

    if let Some(out) = &out {
        match format {
            ReportFormat::Csv => report::write_exp1_csv(out, &rep)?,
            ReportFormat::Json => report::write_json(out, &rep)?,
        }
        report::write_meta(
            out,
            "exp1",
            serde_json::json!({ "total_s": total_s, "trials": timings }),
        )?;
        println!("wrote {} and {}", out.display(), report::meta_path(out).display());
    }

    let all_tolerance = rep.trials.iter().all(|t| {
        t.l1_mpgsa.tolerance_termination
            && t.partial_mpgsa.tolerance_termination
            && t.partial_empgsa.tolerance_termination
    });
    Ok(if all_tolerance { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_exp2(a: Exp2Args, file: &FileConfig) -> Result<ExitCode, CliError> {
    let d = Exp2Options::default();
    let opts = Exp2Options {
        trials: pick(a.trials, file.get("trials")?, d.trials),
        base_seed: pick(a.seed, file.get("seed")?, d.base_seed),
        n: pick(a.n, file.get("n")?, d.n),
        topk: pick(a.topk, file.get("topk")?, d.topk),
        lambda: pick(a.lambda, file.get("lambda")?, d.lambda),
        max_iter: pick(a.max_iter, file.get("max_iter")?, d.max_iter),
        eta: pick(a.eta, file.get("eta")?, d.eta),
    };
    let out: Option<PathBuf> = a.out.or(file.get("out")?);
    let format = pick(a.format, file.get("format")?, ReportFormat::Csv);

    let started = Instant::now();
    let (rep, timings) = run_exp2(&opts)?;
    let total_s = started.elapsed().as_secs_f64();
    report::print_exp2_table(&rep, &timings);
    println!("total wall time: {total_s:.1} s");

    if let Some(out) = &out {
        match format {
            ReportFormat::Csv => report::write_exp2_csv(out, &rep)?,
            ReportFormat::Json => report::write_json(out, &rep)?,
        }
        report::write_meta(
            out,
            "exp2",
            serde_json::json!({ "total_s": total_s, "trials": timings }),
        )?;
        println!("wrote {} and {}", out.display(), report::meta_path(out).display());
    }

    let all_tolerance = rep
        .trials
        .iter()
        .all(|t| t.mpgsa.tolerance_termination && t.empgsa.tolerance_termination);
    Ok(if all_tolerance { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_check(a: CheckArgs, file: &FileConfig) -> Result<ExitCode, CliError> {
    let bundle_path: Option<PathBuf> = a.bundle.or(file.get("bundle")?);
    let instance_path: Option<PathBuf> = a.instance.or(file.get("instance")?);
    let point_path: Option<PathBuf> = a.point.or(file.get("point")?);

    let (inst, m) = match (&bundle_path, &instance_path) {
        (Some(b), None) => {
            let bundle = inst_io::load_bundle(b).map_err(|e| in_file(b, e))?;
            let inst = bundle.instance()?;
            let m = match &point_path {
                Some(p) => inst_io::read_matrix_csv(p).map_err(|e| in_file(p, e))?,
                None => DMatrix::from_column_slice(bundle.n(), 1, bundle.xbar.as_slice()),
            };
            (inst, m)
        }
        (None, Some(i)) => {
            let inst = inst_io::load_sgep(i).map_err(|e| in_file(i, e))?;
            let point_path = point_path
                .ok_or_else(|| CliError::usage("--point is required with --instance"))?;
            let m = inst_io::read_matrix_csv(&point_path).map_err(|e| in_file(&point_path, e))?;
            (inst, m)
        }
        (Some(_), Some(_)) => {
            return Err(CliError::usage("give either --instance or --bundle, not both"))
        }
        (None, None) => return Err(CliError::usage("one of --instance or --bundle is required")),
    };

    let (n, p) = (inst.n(), inst.p());
    if m.nrows() != n || m.ncols() != p {
        return Err(CliError::usage(format!(
            "point is {}x{} but the instance needs {n}x{p}",
            m.nrows(),
            m.ncols()
        )));
    }
    let problem = inst.problem();
    let x = problem.manifold().point(m)?;

    let eta = pick(a.eta, file.get("eta")?, tol::ACTIVE_PIECE_ETA);
    let probe_t: Option<f64> = a.probe_t.or(file.get("probe_t")?);
    let rep = stationarity_report(&problem, &x, probe_t, eta)?;
    let threshold = pick(
        a.threshold,
        file.get("threshold")?,
        10.0 * (tol::VTOL_SCALE * (n * p) as f64).sqrt(),
    );

    let critical_ok = rep.critical_residual <= threshold;
    let lifted_ok = rep.lifted_b_residual.map(|r| r <= threshold);

    println!("probe t            {:.6e}", rep.probe_t);
    println!("eta                {:.1e}  ({} nearly-active pieces)", eta, rep.active_pieces);
    println!("threshold          {threshold:.6e}");
    println!("critical residual  {:.6e}", rep.critical_residual);
    match rep.lifted_b_residual {
        Some(r) => println!("lifted residual    {r:.6e}"),
        None => println!("lifted residual    n/a (objective has no finite-max term)"),
    }
    let lifted_verdict = match lifted_ok {
        Some(true) => "yes",
        Some(false) => "no",
        None => "n/a",
    };
    println!("critical: {}, lifted-B: {}", if critical_ok { "yes" } else { "no" }, lifted_verdict);

    if let Some(out) = a.out.or(file.get("out")?) {
        report::write_json(
            &out,
            &serde_json::json!({
                "probe_t": rep.probe_t,
                "eta": eta,
                "threshold": threshold,
                "critical_residual": rep.critical_residual,
                "lifted_b_residual": rep.lifted_b_residual,
                "active_pieces": rep.active_pieces,
                "critical": critical_ok,
                "lifted_b": lifted_ok,
            }),
        )?;
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(a: GenArgs, file: &FileConfig) -> Result<ExitCode, CliError> {
    let kind = pick_required(a.kind, file.get("kind")?, "kind")?;
    let out: PathBuf = pick_required(a.out, file.get("out")?, "out")?;
    let seed = pick(a.seed, file.get("seed")?, 0);
    let format: Option<ReportFormat> = a.format.or(file.get("format")?);
    if format == Some(ReportFormat::Csv) && kind != GenKind::Sfda {
        return Err(CliError::usage("--format csv applies only to --kind sfda"));
    }

    match kind {
        GenKind::Sfda => {
            let dataset = gen_sfda(seed);
            inst_io::save_sfda(&out, &dataset)?;
            println!("wrote {} (classification dataset, seed {seed})", out.display());
            if format == Some(ReportFormat::Csv) {
                let stem = out.with_extension("");
                inst_io::sfda_to_csv(&stem, &dataset)?;
                println!(
                    "wrote {}_train.csv and {}_test.csv",
                    stem.display(),
                    stem.display()
                );
            }
        }
        GenKind::Critical => {
            let n = pick(a.n, file.get("n")?, 100);
            let topk = pick(a.topk, file.get("topk")?, 3);
            let lambda = pick(a.lambda, file.get("lambda")?, 1.2);
            let bundle = gen_critical_instance(n, topk, lambda, seed)?;
            inst_io::save_bundle(&out, &bundle)?;
            println!(
                "wrote {} (constructed instance: n={n}, topk={topk}, lambda={lambda}, seed={seed}, \
                 global optimum {:.6e})",
                out.display(),
                bundle.global_opt
            );
        }
        GenKind::Sgep => {
            let n = pick(a.n, file.get("n")?, 100);
            let p = pick(a.p, file.get("p")?, 3);
            let lambda = pick(a.lambda, file.get("lambda")?, 0.21);
            let topk: Option<usize> = a.topk.or(file.get("topk")?);
            let inst = random_sgep(n, p, lambda, topk, seed)?;
            inst_io::save_sgep(&out, &inst)?;
            let penalty = match topk {
                Some(k) => format!("partial penalty excluding top {k}"),
                None => "l1 penalty".to_string(),
            };
            println!(
                "wrote {} (trace-ratio instance: n={n}, p={p}, lambda={lambda}, {penalty}, seed {seed})",
                out.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
