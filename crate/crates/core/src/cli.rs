//! Command-line front end: `run`, `sweep`, `audit` and `duality`.
//!
//! Exit codes: 0 success, 1 audit failure or runtime error, 2 invalid
//! input, 3 stiffness failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::audit::AuditReport;
use crate::diagnostics::{
    dissipation_audit, elem1_scan, elem2_scan, gel_report, interpolation_audit_series, refinement_convergence,
    GelReport,
};
use crate::duality::{closeness_check, conjugate, estimate_kmq, heat_mr_ratio, mass_lp_stability, Forcing, MRProbe};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{
    audit_proof_constants, validate, Coagulation, Daughters, Fragmentation, KernelSet, PowerLawCoagulation,
};
use crate::oracle::{constant_kernel_exact, ode_reference, HomogeneousState};
use crate::scenario::ScenarioConfig;
use crate::solver::{run, RunResult};
use crate::state::{TruncatedState, TruncationMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_STIFF: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "coagfrag", version, about = "Coagulation-fragmentation-diffusion laboratory")]
pub struct Cli {
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one scenario and write moments, profiles and metadata.
    Run(RunArgs),
    /// Run a scenario at several truncation sizes and report gelation and stability.
    Sweep(SweepArgs),
    /// Run the kernel, oracle, elementary-bound and (when requested) moment audits.
    Audit(AuditArgs),
    /// Estimate the maximal-regularity constant of the Neumann heat equation.
    Duality(DualityArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Truncation sizes; defaults to n, 2n, 4n.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<usize>,
    /// Gel-fraction threshold.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Exponent of the mass stability norm.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Scenario file, or a run directory containing run_meta.json.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Samples for the first elementary-bound search (the second uses a tenth).
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DualityArgs {
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cells per axis.
    #[arg(long, default_value_t = 256)]
    pub cells: usize,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t_final: f64,
    /// Smallest diffusion coefficient for the closeness check.
    #[arg(long)]
    pub a: Option<f64>,
    /// Largest diffusion coefficient for the closeness check.
    #[arg(long)]
    pub b: Option<f64>,
    /// Integrability exponent for the closeness check (uses `K_{(a+b)/2, p'}`).
    #[arg(long)]
    pub p: Option<f64>,
}

/// Maps an error to the documented exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) | Error::Domain(_) | Error::NonFinite(_) => EXIT_INVALID,
        Error::Stiffness { .. } => EXIT_STIFF,
        _ => EXIT_FAILURE,
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    if let Some(k) = cli.threads {
        // a global pool can only be installed once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
    }
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(&a.scenario, &a.out).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Audit(a) => cmd_audit(a).map(|r| r.all_pass()),
        Command::Duality(a) => cmd_duality(a).map(|v| v["pass"].as_bool().unwrap_or(false)),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let cfg = parse_scenario(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    ScenarioConfig::from_json(&text)
}

/// Parses a scenario file, or the resolved scenario stored in a run
/// directory, without validating it.
fn parse_scenario_or_run(path: &Path) -> Result<ScenarioConfig> {
    if path.is_dir() {
        let meta_path = path.join("run_meta.json");
        let text = fs::read_to_string(&meta_path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", meta_path.display())))?;
        let meta: Value = serde_json::from_str(&text)?;
        let scenario = meta
            .get("scenario")
            .ok_or_else(|| Error::Config(format!("{} has no scenario", meta_path.display())))?;
        return Ok(serde_json::from_value(scenario.clone())?);
    }
    parse_scenario(path)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, &text)
}

/// `i, cell_index, x[, y], value` rows for every species and cell.
pub fn profile_csv(s: &TruncatedState) -> String {
    let grid = s.grid();
    let two_d = grid.dim() == 2;
    let mut out = String::from(if two_d {
        "i,cell_index,x,y,value\n"
    } else {
        "i,cell_index,x,value\n"
    });
    for i in 1..=s.n() {
        for (cell, v) in s.species(i).iter().enumerate() {
            let x = grid.center(cell);
            if two_d {
                let _ = writeln!(out, "{i},{cell},{:e},{:e},{v:e}", x[0], x[1]);
            } else {
                let _ = writeln!(out, "{i},{cell},{:e},{v:e}", x[0]);
            }
        }
    }
    out
}

pub fn profile_name(t: f64) -> String {
    format!("profile_{t}.csv")
}

fn run_meta(result: &RunResult, files: &[String]) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": result.config,
        "units": "dimensionless simulation units",
        "truncation_mode_note": match result.mode() {
            TruncationMode::Conservative => "conservative truncation",
            TruncationMode::FullLoss => "full-loss truncation (artifact choice for observing mass loss)",
        },
        "reaction_scheme": if result.imex { "imex_ark324" } else { "explicit_dp54" },
        "diffusion": { "a": result.diffusion.a, "b": result.diffusion.b },
        "stats": result.stats,
        "initial_mass": result.series.initial_mass(),
        "final_mass": result.series.masses().last(),
        "files": files,
    })
}

/// Writes the outputs of a finished run into `out`.
pub fn write_run(result: &RunResult, out: &Path) -> Result<Vec<String>> {
    let mut files = vec!["moments.csv".to_string()];
    write(out, "moments.csv", &result.series.to_csv())?;
    let profiles: Vec<&TruncatedState> = if result.snapshots.is_empty() {
        vec![&result.final_state]
    } else {
        result.snapshots.iter().collect()
    };
    for s in profiles {
        let name = profile_name(s.time);
        write(out, &name, &profile_csv(s))?;
        files.push(name);
    }
    files.push("run_meta.json".into());
    write_json(out, "run_meta.json", &run_meta(result, &files))?;
    Ok(files)
}

pub fn cmd_run(scenario: &Path, out: &Path) -> Result<RunResult> {
    let cfg = load_scenario(scenario)?;
    let result = run(&cfg)?;
    write_run(&result, out)?;
    Ok(result)
}

/// Runs `cfg` at every truncation size in `levels` (ascending).
pub fn run_levels(cfg: &ScenarioConfig, levels: &[usize]) -> Result<Vec<RunResult>> {
    levels.iter().map(|&n| run(&cfg.with_n(n))).collect()
}

fn resolve_levels(cfg: &ScenarioConfig, levels: &[usize]) -> Result<Vec<usize>> {
    let mut levels = if levels.is_empty() {
        let n = cfg.n();
        vec![n, 2 * n, 4 * n]
    } else {
        levels.to_vec()
    };
    levels.sort_unstable();
    levels.dedup();
    if levels.len() < 3 || levels[0] < 2 {
        return Err(Error::Config(
            "--levels needs at least three distinct sizes >= 2".into(),
        ));
    }
    Ok(levels)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<RunResult>,
    pub gel: GelReport,
    pub reports: Value,
}

pub fn sweep(cfg: &ScenarioConfig, levels: &[usize], delta: f64, p: f64) -> Result<SweepOutcome> {
    let levels = resolve_levels(cfg, levels)?;
    for &n in &levels {
        cfg.with_n(n).validate()?;
    }
    let runs = run_levels(cfg, &levels)?;
    let refs: Vec<&RunResult> = runs.iter().collect();
    let gel = gel_report(&refs, delta)?;
    let tail_order = cfg
        .moment_orders()
        .into_iter()
        .filter(|&k| k > 1.0)
        .fold(f64::NAN, f64::max);
    let refinement: Vec<Value> = if tail_order.is_finite() {
        runs.windows(2)
            .map(|w| refinement_convergence(&w[0], &w[1], tail_order).map(|r| json!(r)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let stability = if cfg.truncation.mode == TruncationMode::Conservative {
        json!(mass_lp_stability(&refs, p)?)
    } else {
        Value::Null
    };
    let reports = json!({
        "refinement_order": if tail_order.is_finite() { json!(tail_order) } else { Value::Null },
        "refinement": refinement,
        "mass_lp_stability": stability,
    });
    Ok(SweepOutcome { runs, gel, reports })
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepOutcome> {
    let cfg = load_scenario(&args.scenario)?;
    let outcome = sweep(&cfg, &args.levels, args.delta, args.p)?;
    for r in &outcome.runs {
        write(&args.out, &format!("moments_n{}.csv", r.n()), &r.series.to_csv())?;
    }
    write_json(&args.out, "gel_report.json", &outcome.gel)?;
    write_json(&args.out, "stability.json", &outcome.reports)?;
    let meta = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": cfg,
        "levels": outcome.runs.iter().map(|r| r.n()).collect::<Vec<_>>(),
        "delta": args.delta,
        "p": args.p,
        "stats": outcome.runs.iter().map(|r| r.stats).collect::<Vec<_>>(),
    });
    write_json(&args.out, "run_meta.json", &meta)?;
    Ok(outcome)
}

/// Closed-form comparison for the constant kernel at `n = 512`.
pub fn closed_form_audit(tol: f64) -> Result<AuditReport> {
    let ks = KernelSet::coagulation_only(PowerLawCoagulation::constant());
    let times = [0.5, 1.0, 2.0, 4.0];
    let tr = ode_reference(
        &ks,
        TruncationMode::Conservative,
        &HomogeneousState::monodisperse(512, 1.0),
        &times,
        tol,
    )?;
    let mut worst = 0.0f64;
    for (t, c) in tr.times.iter().zip(&tr.states) {
        for i in 1..=20 {
            worst = worst.max((c[i - 1] - constant_kernel_exact(i, *t)?).abs());
        }
    }
    let mut report = AuditReport::new();
    report.push(
        "constant_kernel_closed_form",
        json!({"n": 512, "i_max": 20, "times": times, "tol": tol, "limit": 1e-8}),
        worst,
        worst <= 1e-8,
    );
    Ok(report)
}

/// Every audit applicable to a scenario.
pub fn audit_scenario(cfg: &ScenarioConfig, samples: usize, seed: u64) -> Result<AuditReport> {
    let mut report = validate(&cfg.kernels, cfg.n())?;
    let mut orders = vec![1.5, 2.0, 3.0];
    for &l in &cfg.outputs.dissipation_l {
        if !orders.iter().any(|&o: &f64| (o - l).abs() < 1e-12) {
            orders.push(l);
        }
    }
    if let Daughters::PowerLaw(dist) = &cfg.kernels.daughters {
        report.extend(audit_proof_constants(dist, &orders, 2000)?);
    }
    let e1 = elem1_scan(samples, seed);
    report.push("elem1_bound_search", json!(e1), e1.min_slack, e1.passed());
    let e2 = elem2_scan((samples / 10).max(1), seed.wrapping_add(1));
    report.push("elem2_bound_search", json!(e2), e2.min_slack, e2.passed());
    report.extend(closed_form_audit(1e-10)?);

    if !cfg.outputs.dissipation_l.is_empty() {
        let (alpha, beta, gamma) = cfg.power_law_exponents().expect("validated power-law kernels");
        let (c_q, c_f) = match (&cfg.kernels.coagulation, &cfg.kernels.fragmentation) {
            (Coagulation::PowerLaw(q), Fragmentation::PowerLaw(f)) => (q.c_q, f.c_f),
            _ => unreachable!("validated power-law kernels"),
        };
        let result = run(cfg)?;
        for &l in &cfg.outputs.dissipation_l {
            report.extend(dissipation_audit(&result, l, alpha, beta, gamma, c_q, c_f)?);
            if l > 2.0 - (gamma - alpha) && l > 2.0 - (gamma - beta) {
                report.extend(interpolation_audit_series(&result.series, alpha, beta, gamma, l)?);
            }
        }
    }
    Ok(report)
}

pub fn cmd_audit(args: &AuditArgs) -> Result<AuditReport> {
    let cfg = parse_scenario_or_run(&args.scenario)?;
    // kernel defects are audit findings, not configuration errors
    cfg.kernels.check_shape(cfg.n())?;
    let kernel_report = validate(&cfg.kernels, cfg.n())?;
    let report = if kernel_report.all_pass() {
        cfg.validate()?;
        audit_scenario(&cfg, args.samples, args.seed)?
    } else {
        kernel_report
    };
    write_json(&args.out, "audit.json", &report)?;
    for c in report.failures() {
        eprintln!("audit failure: {} (margin {:e}) {}", c.check, c.margin, c.params);
    }
    Ok(report)
}

pub fn cmd_duality(args: &DualityArgs) -> Result<Value> {
    if args.trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let grid = match args.dim {
        1 => Grid::interval(1.0, args.cells)?,
        2 => Grid::rectangle(1.0, 1.0, args.cells, args.cells)?,
        d => return Err(Error::Config(format!("--dim must be 1 or 2, got {d}"))),
    };
    if !(args.m > 0.0) || !(args.q > 1.0) || !(args.t_final > 0.0) {
        return Err(Error::Config("need --m > 0, --q > 1 and --T > 0".into()));
    }
    let est = estimate_kmq(args.m, args.q, args.trials, args.seed, &grid, args.t_final)?;
    let unit = heat_mr_ratio(&MRProbe::new(
        args.m,
        args.q,
        grid,
        args.t_final,
        Forcing::constant(1.0),
    ))?;
    let mut pass = (unit - 1.0).abs() <= 1e-10;
    if args.q == 2.0 {
        pass &= est.estimate <= 1.05;
    }
    let closeness = match (args.a, args.b, args.p) {
        (None, None, None) => Value::Null,
        (Some(a), Some(b), Some(p)) => {
            if !(p > 1.0) || !(a > 0.0 && a <= b) {
                return Err(Error::Config("closeness check needs 0 < a <= b and p > 1".into()));
            }
            let k = estimate_kmq(0.5 * (a + b), conjugate(p), args.trials, args.seed, &grid, args.t_final)?;
            let report = closeness_check(a, b, p, k.estimate)?;
            pass &= report.pass;
            json!(report)
        }
        _ => return Err(Error::Config("--a, --b and --p must be given together".into())),
    };
    let out = json!({
        "m": est.m,
        "q": est.q,
        "trials": est.trials,
        "seed": est.seed,
        "estimate": est.estimate,
        "estimate_is_lower_bound": true,
        "probes": est.probes,
        "grid": grid,
        "T": args.t_final,
        "constant_forcing_ratio": unit,
        "closeness": closeness,
        "pass": pass,
    });
    write_json(&args.out, "kmq.json", &out)?;
    Ok(out)
}
