//! Command-line surface: argument types, file formats and the subcommand drivers.
//!
//! Structured artifacts are JSON documents carrying `schema` and an echo of the
//! parameters that produced them; time series are RFC-4180 CSV. Every output file
//! is written to a temporary sibling first and renamed into place.

use crate::chart::SystemKind;
use crate::chart::{ChartedSystem, PhaseState};
use crate::criterion::{
    check_grid, f_jet, family_values_near, fd_oracle, FAnsatz, GridReport, Perturbation, XiClosure,
};
use crate::dynamics::{integrate_partial, poincare, Direction, IntegratorConfig, Sample, Scheme, Section, Trajectory};
use crate::error::{Error, Result};
use crate::family::{build_base, build_general, build_shifted, GeneralConstants, Scope, SystemRecord};
use crate::integral_finder::{
    bracket_operator, certify, find_integrals, trivial_integrals, AnsatzSpec, Certification, NullspaceReport,
    QuarticAnsatz,
};
use crate::kovalevskaya::{compare_with_shifted_family, kov_chart_system, kov_grid, match_kovalevskaya};
use crate::quartic_ode::{solve_u, FamilyParams};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Version of every JSON document written by the CLI.
pub const SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "qf", version, about = "Conservative systems on the sphere with quartic first integrals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a system and write its JSON definition.
    Construct(ConstructArgs),
    /// Evaluate the fourth-order criterion on the system's generating function.
    CheckCriterion(CriterionArgs),
    /// Integrate a trajectory and write it as CSV.
    Simulate(SimulateArgs),
    /// Integrate a trajectory and write its crossings of a section as CSV.
    Poincare(PoincareArgs),
    /// Search for polynomial first integrals by nullspace computation.
    FindIntegral(FindIntegralArgs),
    /// Compare the Kovalevskaya chart system with the reference top.
    KovalevskayaMap(KovalevskayaMapArgs),
    /// Collate artifacts into one pass/fail report.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyArg {
    Base,
    Shifted,
    General,
    Kovalevskaya,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct ConstructArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 0.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Shift of the shifted family (required there); `p` of the general family when `d ≠ 0`.
    #[arg(long)]
    pub p: Option<f64>,
    /// Build the single-chart local system instead of the sphere atlas.
    #[arg(long)]
    pub local: bool,
    #[arg(long, default_value_t = 0.0)]
    pub d: f64,
    #[arg(long, default_value_t = 0.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.0)]
    pub d1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub u0: f64,
    #[arg(long, default_value = "-3,3")]
    pub y_range: String,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct CriterionArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// `N_PHIxN_Y`
    #[arg(long, default_value = "30x30")]
    pub grid: String,
    #[arg(long, default_value = "-2,2")]
    pub y_range: String,
    /// Override the closure constants recorded in the system.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub d1: Option<f64>,
    /// `d` of the `d ≠ 0` closure used for shifted systems.
    #[arg(long, default_value_t = 0.5)]
    pub d: f64,
    #[arg(long, default_value_t = 100)]
    pub fd_points: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeArg {
    TripleJump,
    Midpoint,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct TrajectoryArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Initial position `q1,q2` in `--chart`.
    #[arg(long)]
    pub q0: String,
    /// Initial momenta `p1,p2`.
    #[arg(long)]
    pub p0: String,
    /// Chart of the initial state (default: the system's first chart).
    #[arg(long)]
    pub chart: Option<String>,
    #[arg(long = "T", default_value_t = 10.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, value_enum, default_value_t = SchemeArg::TripleJump)]
    pub scheme: SchemeArg,
    /// Record every n-th step.
    #[arg(long, default_value_t = 1)]
    pub every: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub traj: TrajectoryArgs,
    /// Integral file written by `find-integral`; adds its value as column F.
    #[arg(long)]
    pub integral: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub integral_index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct PoincareArgs {
    #[command(flatten)]
    pub traj: TrajectoryArgs,
    /// `q1=value` or `q2=value`.
    #[arg(long, default_value = "q1=0")]
    pub section: String,
    /// Chart of the section (default: the chart of the initial state).
    #[arg(long)]
    pub section_chart: Option<String>,
    /// `+`, `-` or `both`.
    #[arg(long, default_value = "+")]
    pub direction: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct FindIntegralArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub degree: usize,
    #[arg(long, default_value_t = 6)]
    pub fourier: usize,
    #[arg(long, default_value_t = 48)]
    pub radial: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub threshold: f64,
    /// Radial window `lo,hi` (default depends on the chart).
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct KovalevskayaMapArgs {
    /// `N_UxN_PHI`
    #[arg(long, default_value = "50x50")]
    pub grid: String,
    #[arg(long, default_value = "0.05,20")]
    pub u_range: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct ReportArgs {
    /// Output of `check-criterion`.
    #[arg(long)]
    pub criterion: Option<PathBuf>,
    /// Output of `simulate`.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Output of `find-integral`.
    #[arg(long)]
    pub integral: Option<PathBuf>,
    /// Output of `kovalevskaya-map`.
    #[arg(long)]
    pub kovalevskaya: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-7)]
    pub criterion_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub energy_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub integral_tol: f64,
    #[arg(long, default_value_t = 1e3)]
    pub min_gap: f64,
    /// Required number of integrals beyond 1, H, H².
    #[arg(long, default_value_t = 0)]
    pub min_integrals: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the report as a markdown table.
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Parsing helpers

pub fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::BadParams(format!("{what}: expected two comma-separated numbers, got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let x: f64 = parts[0].parse().map_err(|_| bad())?;
    let y: f64 = parts[1].parse().map_err(|_| bad())?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(bad());
    }
    Ok((x, y))
}

pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::BadParams(format!("grid: expected NxM with positive integers, got {s:?}"));
    let (n, m) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    let m: usize = m.trim().parse().map_err(|_| bad())?;
    if n == 0 || m == 0 {
        return Err(bad());
    }
    Ok((n, m))
}

/// `q1=value` / `q2=value` → (coordinate index, value).
pub fn parse_section(s: &str) -> Result<(usize, f64)> {
    let bad = || Error::BadParams(format!("section: expected q1=value or q2=value, got {s:?}"));
    let (name, value) = s.split_once('=').ok_or_else(bad)?;
    let coord = match name.trim() {
        "q1" => 0,
        "q2" => 1,
        _ => return Err(bad()),
    };
    let value: f64 = value.trim().parse().map_err(|_| bad())?;
    if !value.is_finite() {
        return Err(bad());
    }
    Ok((coord, value))
}

pub fn parse_direction(s: &str) -> Result<Direction> {
    match s.trim() {
        "+" | "increasing" => Ok(Direction::Increasing),
        "-" | "decreasing" => Ok(Direction::Decreasing),
        "both" | "+-" => Ok(Direction::Both),
        _ => Err(Error::BadParams(format!("direction must be +, - or both, got {s:?}"))),
    }
}

fn positive(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::BadParams(format!("{what} must be positive and finite, got {x}")))
    }
}

// ---------------------------------------------------------------------------
// File helpers

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Io(format!("output path {} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::Io(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::Io(format!("{}: {e}", path.display()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn check_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(format!("{}: no such file", path.display())))
    }
}

fn check_output(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if path.file_name().is_none() || !parent.is_dir() {
        return Err(Error::Io(format!("{}: output directory does not exist", path.display())));
    }
    Ok(())
}

pub fn load_system(path: &Path) -> Result<(SystemRecord, ChartedSystem)> {
    let rec: SystemRecord = read_json(path)?;
    let sys = ChartedSystem::from_record(&rec)?;
    Ok((rec, sys))
}

/// Shortest representation that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

// ---------------------------------------------------------------------------
// construct

pub fn build_system(args: &ConstructArgs) -> Result<ChartedSystem> {
    let scope = if args.local { Scope::Local } else { Scope::Global };
    match args.family {
        FamilyArg::Base => build_base(args.a, args.b, scope),
        FamilyArg::Shifted => {
            let p = args.p.ok_or_else(|| Error::BadParams("the shifted family needs --p".into()))?;
            build_shifted(args.a, args.b, p, scope)
        }
        FamilyArg::General => {
            let range = parse_pair(&args.y_range, "y-range")?;
            positive(args.tol, "tol")?;
            let usol = solve_u(FamilyParams::new(args.a, args.b), args.u0, range, args.tol)?;
            build_general(
                Arc::new(usol),
                GeneralConstants { d: args.d, c: args.c, d1: args.d1, p: args.p.unwrap_or(0.0) },
            )
        }
        FamilyArg::Kovalevskaya => Ok(kov_chart_system()),
    }
}

pub fn cmd_construct(args: &ConstructArgs) -> Result<()> {
    check_output(&args.out)?;
    let sys = build_system(args)?;
    let mut text = sys.to_json()?;
    text.push('\n');
    write_atomic(&args.out, text.as_bytes())
}

// ---------------------------------------------------------------------------
// check-criterion

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSummary {
    pub points: usize,
    pub step: f64,
    pub max_relative_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    /// Max relative residual with `ξ''` shifted by 1% of the closure scale.
    pub xi_offset: f64,
    /// Max relative residual with a 1% change of `d` in the quadratic term only.
    pub d_term: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub schema: u32,
    pub command: String,
    pub params: serde_json::Value,
    pub system: SystemRecord,
    pub closure: XiClosure,
    pub grid: GridReport,
    pub fd: FdSummary,
    pub sensitivity: Sensitivity,
    pub tol: f64,
    pub passed: bool,
}

/// The generating function of a family system together with its closure.
pub fn ansatz_for(rec: &SystemRecord, args: &CriterionArgs, y_range: (f64, f64)) -> Result<(FAnsatz, XiClosure)> {
    let c = args.c.unwrap_or(rec.c);
    let d1 = args.d1.unwrap_or(rec.d1);
    let closure = match rec.kind {
        SystemKind::Base => XiClosure::DZero { c, d1 },
        SystemKind::Shifted => XiClosure::DNonzero { d: args.d, d1, p: rec.p.unwrap_or(0.0) },
        SystemKind::General if rec.d != 0.0 => XiClosure::DNonzero { d: rec.d, d1, p: rec.p.unwrap_or(0.0) },
        SystemKind::General => XiClosure::DZero { c, d1 },
        SystemKind::Kovalevskaya | SystemKind::Fixture => {
            return Err(Error::BadParams(
                "the criterion needs a family system with A(u0) > 0 (base, shifted or general)".into(),
            ))
        }
    };
    let lo = y_range.0.min(0.0) - 0.5;
    let hi = y_range.1.max(0.0) + 0.5;
    let usol = solve_u(FamilyParams::new(rec.a, rec.b), rec.u0.unwrap_or(0.0), (lo, hi), 1e-12)?;
    Ok((FAnsatz::family(Arc::new(usol), closure)?, closure))
}

pub fn cmd_check_criterion(args: &CriterionArgs) -> Result<CriterionReport> {
    check_input(&args.system)?;
    check_output(&args.out)?;
    let (n_phi, n_y) = parse_grid(&args.grid)?;
    let y_range = parse_pair(&args.y_range, "y-range")?;
    positive(args.tol, "tol")?;
    positive(args.fd_step, "fd-step")?;
    let (rec, _) = load_system(&args.system)?;
    let (ansatz, closure) = ansatz_for(&rec, args, y_range)?;
    let grid = check_grid(&ansatz, n_phi, n_y, y_range)?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst: f64 = 0.0;
    let mut used = 0;
    let mut attempts = 0;
    while used < args.fd_points && attempts < 20 * args.fd_points.max(1) {
        attempts += 1;
        let phi = rng.gen_range(0.0..TAU);
        let y = rng.gen_range(y_range.0..=y_range.1);
        let Ok(jet) = f_jet(&ansatz, phi, y) else { continue };
        let partial_u1 = ansatz.partials(0.0, y)?.get(0, 1);
        if !jet.f_zzzz.re.is_finite() || partial_u1.abs() < 1e-6 {
            continue;
        }
        let f = family_values_near(&ansatz, phi, y)?;
        let fd = fd_oracle(&f, phi, y, args.fd_step);
        worst = worst.max(jet.relative_difference(&fd));
        used += 1;
    }

    let scale = match closure {
        XiClosure::DZero { c, .. } => c.abs().max(1.0),
        XiClosure::DNonzero { d, .. } => d.abs().max(1.0),
    };
    let offset =
        check_grid(&ansatz.perturbed(Perturbation { xi_offset: 0.01 * scale, d_term_rel: 0.0 }), n_phi, n_y, y_range)?;
    let d_term = if closure.d() != 0.0 {
        Some(
            check_grid(&ansatz.perturbed(Perturbation { xi_offset: 0.0, d_term_rel: 0.01 }), n_phi, n_y, y_range)?
                .max_relative,
        )
    } else {
        None
    };
    let report = CriterionReport {
        schema: SCHEMA,
        command: "check-criterion".into(),
        params: serde_json::to_value(args)?,
        system: rec,
        closure,
        passed: grid.max_relative < args.tol,
        grid,
        fd: FdSummary { points: used, step: args.fd_step, max_relative_difference: worst },
        sensitivity: Sensitivity { xi_offset: offset.max_relative, d_term },
        tol: args.tol,
    };
    write_json(&args.out, &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// simulate / poincare

fn integrator_config(args: &TrajectoryArgs) -> Result<IntegratorConfig> {
    let cfg = IntegratorConfig {
        dt: args.dt,
        scheme: match args.scheme {
            SchemeArg::TripleJump => Scheme::TripleJump,
            SchemeArg::Midpoint => Scheme::ImplicitMidpoint,
        },
        sample_every: args.every,
        ..IntegratorConfig::default()
    };
    cfg.validate()?;
    if !(args.t_end.is_finite() && args.t_end >= 0.0) {
        return Err(Error::BadParams(format!("T must be finite and non-negative, got {}", args.t_end)));
    }
    Ok(cfg)
}

fn initial_state(sys: &ChartedSystem, args: &TrajectoryArgs) -> Result<PhaseState> {
    let (q1, q2) = parse_pair(&args.q0, "q0")?;
    let (p1, p2) = parse_pair(&args.p0, "p0")?;
    let chart = match &args.chart {
        Some(name) => sys.chart_index(name)?,
        None => 0,
    };
    Ok(PhaseState::new(chart, [q1, q2], [p1, p2]))
}

/// Runs the integration; on a numerical failure the partial trajectory is returned with the error.
pub fn run_trajectory(sys: &ChartedSystem, args: &TrajectoryArgs) -> Result<(Trajectory, Option<Error>)> {
    let cfg = integrator_config(args)?;
    let s0 = initial_state(sys, args)?;
    Ok(integrate_partial(sys, &s0, args.t_end, &cfg))
}

/// Contents of `integral.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralFile {
    pub schema: u32,
    pub command: String,
    pub params: serde_json::Value,
    pub system: SystemRecord,
    pub report: NullspaceReport,
}

impl IntegralFile {
    pub fn integral(&self, index: usize) -> Result<QuarticAnsatz> {
        self.report.integral(index).ok_or_else(|| {
            Error::BadParams(format!(
                "integral index {index} out of range ({} nontrivial integrals found)",
                self.report.deflated_dim
            ))
        })
    }
}

/// `F` at a sample, or `None` where the sample does not map into the ansatz window.
fn integral_value(f: &QuarticAnsatz, sys: &ChartedSystem, chart: usize, s: &Sample) -> Option<f64> {
    let m = sys.transition(&s.state, chart).ok()?;
    f.eval(m.q, m.p).ok()
}

pub const TRAJECTORY_HEADER: [&str; 8] = ["t", "chart", "q1", "q2", "p1", "p2", "H", "F"];

pub fn trajectory_csv(sys: &ChartedSystem, traj: &Trajectory, integral: Option<&QuarticAnsatz>) -> Result<Vec<u8>> {
    let chart = match integral {
        Some(f) => Some(sys.chart_index(&f.spec.chart)?),
        None => None,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for s in &traj.samples {
        let f = match (integral, chart) {
            (Some(f), Some(c)) => integral_value(f, sys, c, s).map(num).unwrap_or_default(),
            _ => String::new(),
        };
        let name = &sys.chart(s.state.chart)?.name;
        w.write_record([
            num(s.t),
            name.clone(),
            num(s.state.q[0]),
            num(s.state.q[1]),
            num(s.state.p[0]),
            num(s.state.p[1]),
            num(s.h),
            f,
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Reads a trajectory CSV back; returns the samples and the F column.
pub fn read_trajectory_csv(sys: &ChartedSystem, path: &Path) -> Result<(Vec<Sample>, Vec<Option<f64>>)> {
    let text = read_text(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let fmt = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let headers = r.headers().map_err(|e| fmt(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRAJECTORY_HEADER {
        return Err(fmt(format!("unexpected header {headers:?}")));
    }
    let mut samples = Vec::new();
    let mut fs = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let x =
            |i: usize| -> Result<f64> { rec[i].parse::<f64>().map_err(|_| fmt(format!("bad number {:?}", &rec[i]))) };
        let chart = sys.chart_index(&rec[1])?;
        samples.push(Sample { t: x(0)?, state: PhaseState::new(chart, [x(2)?, x(3)?], [x(4)?, x(5)?]), h: x(6)? });
        fs.push(if rec[7].is_empty() { None } else { Some(x(7)?) });
    }
    Ok((samples, fs))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Trajectory> {
    check_input(&args.traj.system)?;
    if let Some(p) = &args.integral {
        check_input(p)?;
    }
    check_output(&args.out)?;
    let (_, sys) = load_system(&args.traj.system)?;
    let integral = match &args.integral {
        Some(p) => Some(read_json::<IntegralFile>(p)?.integral(args.integral_index)?),
        None => None,
    };
    let (traj, err) = run_trajectory(&sys, &args.traj)?;
    write_atomic(&args.out, &trajectory_csv(&sys, &traj, integral.as_ref())?)?;
    match err {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

pub fn cmd_poincare(args: &PoincareArgs) -> Result<usize> {
    check_input(&args.traj.system)?;
    check_output(&args.out)?;
    let (coord, value) = parse_section(&args.section)?;
    let direction = parse_direction(&args.direction)?;
    let (_, sys) = load_system(&args.traj.system)?;
    let s0 = initial_state(&sys, &args.traj)?;
    let chart = match &args.section_chart {
        Some(name) => sys.chart_index(name)?,
        None => s0.chart,
    };
    let cfg = integrator_config(&args.traj)?;
    let (traj, err) = integrate_partial(&sys, &s0, args.traj.t_end, &cfg);
    let section = Section { chart, coord, value, direction };
    let crossings = poincare(&sys, &traj, &section, &cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["t", "chart", "q1", "q2", "p1", "p2", "H"]).map_err(csv_err)?;
    for c in &crossings {
        let h = sys.hamiltonian(&c.state)?;
        w.write_record([
            num(c.t),
            sys.chart(c.state.chart)?.name.clone(),
            num(c.state.q[0]),
            num(c.state.q[1]),
            num(c.state.p[0]),
            num(c.state.p[1]),
            num(h),
        ])
        .map_err(csv_err)?;
    }
    write_atomic(&args.out, &w.into_inner().map_err(|e| Error::Io(e.to_string()))?)?;
    match err {
        Some(e) => Err(e),
        None => Ok(crossings.len()),
    }
}

// ---------------------------------------------------------------------------
// find-integral

pub fn cmd_find_integral(args: &FindIntegralArgs) -> Result<IntegralFile> {
    check_input(&args.system)?;
    check_output(&args.out)?;
    positive(args.threshold, "threshold")?;
    let (rec, sys) = load_system(&args.system)?;
    let mut spec = AnsatzSpec::for_system(&sys, args.degree, args.fourier, args.radial)?;
    if let Some(w) = &args.window {
        let (lo, hi) = parse_pair(w, "window")?;
        spec.window = (lo, hi);
    }
    let op = bracket_operator(&sys, &spec)?;
    let trivials = trivial_integrals(&sys, &spec)?;
    let report = find_integrals(&op, &trivials, args.threshold)?;
    let file = IntegralFile {
        schema: SCHEMA,
        command: "find-integral".into(),
        params: serde_json::to_value(args)?,
        system: rec,
        report,
    };
    write_json(&args.out, &file)?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// kovalevskaya-map

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KovalevskayaReport {
    pub schema: u32,
    pub command: String,
    pub params: serde_json::Value,
    #[serde(rename = "match")]
    pub matched: crate::kovalevskaya::KovalevskayaMatch,
    pub shifted_family: crate::kovalevskaya::ShiftedFormComparison,
    pub passed: bool,
}

pub fn cmd_kovalevskaya_map(args: &KovalevskayaMapArgs) -> Result<KovalevskayaReport> {
    check_output(&args.out)?;
    let (n_u, n_phi) = parse_grid(&args.grid)?;
    let (lo, hi) = parse_pair(&args.u_range, "u-range")?;
    if !(0.0 < lo && lo < hi) {
        return Err(Error::BadParams(format!("u-range must satisfy 0 < lo < hi, got ({lo}, {hi})")));
    }
    let matched = match_kovalevskaya(&kov_grid(n_u, n_phi, lo, hi))?;
    let shifted_family = compare_with_shifted_family(n_u, n_phi, lo, hi)?;
    let passed = matched.identity_residual < 1e-12
        && matched.metric_mismatch < 1e-10
        && matched.potential_mismatch < 1e-10
        && (matched.kappa - 2.0).abs() < 1e-12
        && (matched.kappa_tilde + 0.5).abs() < 1e-12;
    let report = KovalevskayaReport {
        schema: SCHEMA,
        command: "kovalevskaya-map".into(),
        params: serde_json::to_value(args)?,
        matched,
        shifted_family,
        passed,
    };
    write_json(&args.out, &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// `"<"` when the value must stay below the tolerance, `">="` when it must reach it.
    pub relation: String,
    pub passed: bool,
    pub source: String,
}

impl Check {
    fn below(name: &str, value: f64, tolerance: f64, source: &Path) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            relation: "<".into(),
            passed: value < tolerance,
            source: source.display().to_string(),
        }
    }

    fn at_least(name: &str, value: f64, tolerance: f64, source: &Path) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            relation: ">=".into(),
            passed: value >= tolerance,
            source: source.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    pub params: serde_json::Value,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl Report {
    pub fn markdown(&self) -> String {
        let mut s = String::from("| check | value | requirement | result |\n|---|---|---|---|\n");
        for c in &self.checks {
            s.push_str(&format!(
                "| {} | {:.3e} | {} {:.1e} | {} |\n",
                c.name,
                c.value,
                c.relation,
                c.tolerance,
                if c.passed { "pass" } else { "FAIL" }
            ));
        }
        s.push_str(&format!("\nOverall: {}\n", if self.passed { "pass" } else { "FAIL" }));
        s
    }
}

pub fn cmd_report(args: &ReportArgs) -> Result<Report> {
    let inputs = [&args.criterion, &args.trajectory, &args.integral, &args.kovalevskaya];
    if inputs.iter().all(|p| p.is_none()) {
        return Err(Error::BadParams("report needs at least one input artifact".into()));
    }
    for p in inputs.iter().copied().flatten() {
        check_input(p)?;
    }
    check_output(&args.out)?;
    if let Some(md) = &args.markdown {
        check_output(md)?;
    }
    let mut checks = Vec::new();
    if let Some(p) = &args.criterion {
        let c: CriterionReport = read_json(p)?;
        checks.push(Check::below("criterion_residual", c.grid.max_relative, args.criterion_tol, p));
    }
    let integral = match &args.integral {
        Some(p) => {
            let f: IntegralFile = read_json(p)?;
            let gap = f.report.gap_ratio.unwrap_or(0.0);
            checks.push(Check::at_least("nullspace_gap", gap, args.min_gap, p));
            checks.push(Check::at_least(
                "nontrivial_integrals",
                f.report.deflated_dim as f64,
                args.min_integrals as f64,
                p,
            ));
            Some(f)
        }
        None => None,
    };
    if let Some(p) = &args.trajectory {
        let rec = match &integral {
            Some(f) => f.system.clone(),
            None => {
                return Err(Error::BadParams(
                    "a trajectory needs --integral, which names the system it belongs to".into(),
                ))
            }
        };
        let sys = ChartedSystem::from_record(&rec)?;
        let (samples, _) = read_trajectory_csv(&sys, p)?;
        let traj = Trajectory { samples, switches: Vec::new(), config: IntegratorConfig::default() };
        checks.push(Check::below("energy_drift", traj.relative_energy_drift(), args.energy_tol, p));
        if let Some(f) = &integral {
            if f.report.deflated_dim > 0 {
                let drift = match certify(&f.integral(0)?, &sys, &traj, args.seed) {
                    Ok(Certification { drift, .. }) => drift,
                    Err(Error::WindowExit { .. }) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
                checks.push(Check::below("integral_drift", drift, args.integral_tol, p));
            }
        }
    }
    if let Some(p) = &args.kovalevskaya {
        let k: KovalevskayaReport = read_json(p)?;
        checks.push(Check::below("kovalevskaya_identity", k.matched.identity_residual, 1e-12, p));
        checks.push(Check::below(
            "kovalevskaya_match",
            k.matched.metric_mismatch.max(k.matched.potential_mismatch),
            1e-10,
            p,
        ));
    }
    let report = Report {
        schema: SCHEMA,
        command: "report".into(),
        params: serde_json::to_value(args)?,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    write_json(&args.out, &report)?;
    if let Some(md) = &args.markdown {
        write_atomic(md, report.markdown().as_bytes())?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------

/// Caps the global thread pool from `QF_THREADS` (unset or empty: rayon's default).
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("QF_THREADS") else { return Ok(()) };
    if v.trim().is_empty() {
        return Ok(());
    }
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::BadParams(format!("QF_THREADS must be a positive integer, got {v:?}")))?;
    // A second initialization (e.g. in tests) keeps the existing pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Construct(a) => cmd_construct(a),
        Command::CheckCriterion(a) => cmd_check_criterion(a).map(drop),
        Command::Simulate(a) => cmd_simulate(a).map(drop),
        Command::Poincare(a) => cmd_poincare(a).map(drop),
        Command::FindIntegral(a) => cmd_find_integral(a).map(drop),
        Command::KovalevskayaMap(a) => cmd_kovalevskaya_map(a).map(drop),
        Command::Report(a) => cmd_report(a).map(drop),
    }
}
