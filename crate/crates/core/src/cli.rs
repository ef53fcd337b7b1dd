//! Command-line front end: `charflow run | converge | list-problems`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::catalog::{self, CatalogParams};
use crate::characteristics::{IcPiece, Inflow, Interp, Problem, Source};
use crate::expr::Expr;
use crate::shock::RkMethod;
use crate::solver::{Propagation, Solver, SolverConfig, SolverError};
use crate::study::{self, Reference, Refinement};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(#[from] SolverError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(SolverError::Config(_)) => EXIT_CONFIG,
            CliError::Solver(SolverError::Problem(_)) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "charflow", version, about = "Characteristic-curve solver for scalar conservation laws")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a problem and write solution, shock and diagnostic tables.
    Run(RunArgs),
    /// Run a refinement ladder and fit the convergence order.
    Converge(ConvergeArgs),
    /// Print the built-in problems.
    ListProblems,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InterpArg {
    Hermite,
    AreaPreserving,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Euler,
    Heun,
    Rk4,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PropagationArg {
    Auto,
    Pspm,
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// Built-in problem name (see list-problems).
    #[arg(long)]
    pub problem: Option<String>,
    /// TOML file with [problem] and [run] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Nodes per smooth initial piece.
    #[arg(long = "n")]
    pub n: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    #[arg(long, value_enum)]
    pub interp: Option<InterpArg>,
    #[arg(long = "shock-method", value_enum)]
    pub shock_method: Option<MethodArg>,
    #[arg(long, value_enum)]
    pub propagation: Option<PropagationArg>,
    /// Source exponent of box-logistic-k.
    #[arg(long)]
    pub k: Option<f64>,
    /// Time between boundary injections.
    #[arg(long = "inflow-spacing")]
    pub inflow_spacing: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Uniform sample points per solution file.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output times (comma separated); defaults to t-end.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub levels: Option<usize>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub run: RunSpec,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    /// Built-in name; the remaining fields define a custom problem.
    pub builtin: Option<String>,
    pub k: Option<f64>,
    pub name: Option<String>,
    pub flux: Option<String>,
    pub dflux: Option<String>,
    pub d2flux: Option<String>,
    pub domain: Option<[f64; 2]>,
    #[serde(default)]
    pub pieces: Vec<PieceSpec>,
    pub source: Option<SourceSpec>,
    pub inflow: Option<InflowSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub lo: f64,
    pub hi: f64,
    pub g: String,
    pub dg: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub q: String,
    pub dq_du: String,
    pub dq_dx: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflowSpec {
    pub u: String,
    pub du: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub n_nodes: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub interp: Option<Interp>,
    pub shock_method: Option<RkMethod>,
    pub propagation: Option<Propagation>,
    pub inflow_spacing: Option<f64>,
    pub sample_count: Option<usize>,
    pub times: Option<Vec<f64>>,
    pub output_path: Option<PathBuf>,
    pub mode: Option<Refinement>,
    pub levels: Option<usize>,
}

/// Fully resolved run parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: Problem,
    /// Catalog name when the problem is built in.
    pub builtin: Option<String>,
    pub solver: SolverConfig,
    pub t_end: f64,
    pub sample_count: usize,
    pub times: Vec<f64>,
    pub output_path: PathBuf,
    pub mode: Refinement,
    pub levels: usize,
}

pub fn parse_config(text: &str) -> Result<ConfigFile, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

fn expr(field: &str, text: &str) -> Result<Expr, CliError> {
    Expr::parse(text).map_err(|e| CliError::Config(format!("{field}: {e}")))
}

fn custom_problem(spec: &ProblemSpec) -> Result<Problem, CliError> {
    let need = |v: &Option<String>, field: &str| v.clone().ok_or_else(|| CliError::Config(format!("problem.{field} is required")));
    let domain = spec.domain.ok_or_else(|| CliError::Config("problem.domain is required".into()))?;
    if spec.pieces.is_empty() {
        return Err(CliError::Config("problem.pieces must list at least one piece".into()));
    }
    let mut pieces = Vec::with_capacity(spec.pieces.len());
    for (i, p) in spec.pieces.iter().enumerate() {
        pieces.push(IcPiece { lo: p.lo, hi: p.hi, g: expr(&format!("problem.pieces[{i}].g"), &p.g)?, dg: expr(&format!("problem.pieces[{i}].dg"), &p.dg)? });
    }
    let source = match &spec.source {
        Some(s) => Some(Source { q: expr("problem.source.q", &s.q)?, dq_du: expr("problem.source.dq_du", &s.dq_du)?, dq_dx: expr("problem.source.dq_dx", &s.dq_dx)? }),
        None => None,
    };
    let inflow = match &spec.inflow {
        Some(b) => Some(Inflow { u: expr("problem.inflow.u", &b.u)?, du: expr("problem.inflow.du", &b.du)? }),
        None => None,
    };
    Ok(Problem {
        name: spec.name.clone().unwrap_or_else(|| "custom".into()),
        flux: expr("problem.flux", &need(&spec.flux, "flux")?)?,
        dflux: expr("problem.dflux", &need(&spec.dflux, "dflux")?)?,
        d2flux: expr("problem.d2flux", &need(&spec.d2flux, "d2flux")?)?,
        source,
        pieces,
        domain: (domain[0], domain[1]),
        inflow,
    })
}

fn builtin_problem(name: &str, k: Option<f64>) -> Result<Problem, CliError> {
    let params = CatalogParams { k: k.unwrap_or(CatalogParams::default().k) };
    catalog::builtin(name, &params)
        .ok_or_else(|| CliError::Config(format!("unknown problem '{name}' (known: {})", catalog::NAMES.join(", "))))
}

/// Merges a config file (if any) with command-line flags; flags win.
pub fn resolve(common: &CommonArgs, samples: Option<usize>, times: Option<Vec<f64>>, mode: Option<ModeArg>, levels: Option<usize>) -> Result<RunConfig, CliError> {
    let file = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            parse_config(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        }
        None => ConfigFile::default(),
    };
    let spec = file.problem.unwrap_or_default();
    let k = common.k.or(spec.k);
    let (problem, builtin) = match (&common.problem, &spec.builtin) {
        (Some(name), _) | (None, Some(name)) => (builtin_problem(name, k)?, Some(name.clone())),
        (None, None) if spec.flux.is_some() => (custom_problem(&spec)?, None),
        (None, None) => return Err(CliError::Config("no problem given: use --problem NAME or a config with a [problem] table".into())),
    };
    let run = file.run;
    let mut solver = SolverConfig::default();
    solver.n_nodes = common.n.or(run.n_nodes).unwrap_or(solver.n_nodes);
    solver.dt = common.dt.or(run.dt).unwrap_or(solver.dt);
    solver.interp = common
        .interp
        .map(|i| match i {
            InterpArg::Hermite => Interp::Hermite,
            InterpArg::AreaPreserving => Interp::AreaPreserving,
        })
        .or(run.interp)
        .unwrap_or_default();
    solver.shock_method = common
        .shock_method
        .map(|m| match m {
            MethodArg::Euler => RkMethod::Euler,
            MethodArg::Heun => RkMethod::Heun,
            MethodArg::Rk4 => RkMethod::Rk4,
        })
        .or(run.shock_method)
        .unwrap_or_default();
    solver.propagation = common
        .propagation
        .map(|p| match p {
            PropagationArg::Auto => Propagation::Auto,
            PropagationArg::Pspm => Propagation::Pspm,
        })
        .or(run.propagation)
        .unwrap_or_default();
    solver.inflow_spacing = common.inflow_spacing.or(run.inflow_spacing);
    solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let t_end = common.t_end.or(run.t_end).unwrap_or(1.0);
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(CliError::Config(format!("t_end must be non-negative, got {t_end}")));
    }
    let mut times = times.or(run.times).unwrap_or_else(|| vec![t_end]);
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(CliError::Config("output times must be non-negative".into()));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let sample_count = samples.or(run.sample_count).unwrap_or(401);
    if sample_count < 2 {
        return Err(CliError::Config("sample count must be at least 2".into()));
    }
    let mode = mode
        .map(|m| match m {
            ModeArg::Spatial => Refinement::Spatial,
            ModeArg::Temporal => Refinement::Temporal,
        })
        .or(run.mode)
        .unwrap_or(Refinement::Spatial);
    let levels = levels.or(run.levels).unwrap_or(4);
    let output_path = common.out.clone().or(run.output_path).unwrap_or_else(|| PathBuf::from("."));
    Ok(RunConfig { problem, builtin, solver, t_end, sample_count, times, output_path, mode, levels })
}

/// Floats with 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// File name of the solution table at time `t`.
pub fn solution_file_name(t: f64) -> String {
    format!("solution_t{t}.csv")
}

pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut solver = Solver::initialize(cfg.problem.clone(), cfg.solver.clone())?;
    let mut written = Vec::new();
    let mut shocks = String::from("t,id,x,u_left,u_right\n");
    let mut diag = String::from("t,conservation_defect,rejected_steps,births,merges,steps,min_overlap_margin,max_area_defect\n");
    for &t in &cfg.times {
        solver.advance(t)?;
        let sample = solver.sample_uniform(cfg.sample_count)?;
        let mut body = String::from("x,u\n");
        for (x, u) in &sample.points {
            let _ = writeln!(body, "{},{}", num(*x), num(*u));
        }
        written.push(write_file(&cfg.output_path, &solution_file_name(t), &body)?);
        for s in solver.shocks()? {
            let _ = writeln!(shocks, "{},{},{},{},{}", num(t), s.id, num(s.x), num(s.u_left), num(s.u_right));
        }
        let d = solver.diagnostics();
        let _ = writeln!(
            diag,
            "{},{},{},{},{},{},{},{}",
            num(t),
            num(solver.conservation_report()?),
            d.rejected_steps,
            d.births,
            d.merges,
            d.steps,
            num(d.min_overlap_margin),
            num(d.max_area_defect)
        );
    }
    written.push(write_file(&cfg.output_path, "shocks.csv", &shocks)?);
    written.push(write_file(&cfg.output_path, "diagnostics.csv", &diag)?);
    Ok(written)
}

pub fn cmd_converge(cfg: &RunConfig) -> Result<(study::Study, PathBuf), CliError> {
    let oracle = cfg.builtin.as_deref().and_then(catalog::entry).and_then(|e| e.oracle);
    let result = study::converge(&cfg.problem, &cfg.solver, cfg.mode, cfg.levels, cfg.t_end, oracle)?;
    let h = match cfg.mode {
        Refinement::Spatial => "h",
        Refinement::Temporal => "dt",
    };
    let err = match result.reference {
        Reference::Oracle => "error",
        Reference::Richardson => "richardson_difference",
    };
    let mut body = format!("level,{h},{err},order\n");
    for l in &result.levels {
        let order = l.order.map(num).unwrap_or_default();
        let _ = writeln!(body, "{},{},{},{}", l.level, num(l.h), num(l.error), order);
    }
    let path = write_file(&cfg.output_path, "convergence.csv", &body)?;
    Ok((result, path))
}

pub fn list_problems() -> String {
    let mut out = String::new();
    for e in catalog::entries() {
        let _ = writeln!(out, "{}", e.name);
        let _ = writeln!(out, "    {}", e.summary);
        if !e.parameters.is_empty() {
            let _ = writeln!(out, "    parameters: {}", e.parameters);
        }
        let _ = writeln!(out, "    oracle: {}", e.oracle_note);
    }
    out
}

fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::ListProblems => Ok(list_problems()),
        Command::Run(a) => {
            let cfg = resolve(&a.common, a.samples, a.times, None, None)?;
            let files = cmd_run(&cfg)?;
            let mut out = String::new();
            for f in files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            Ok(out)
        }
        Command::Converge(a) => {
            let cfg = resolve(&a.common, None, None, a.mode, a.levels)?;
            let (s, path) = cmd_converge(&cfg)?;
            let mut out = String::new();
            for l in &s.levels {
                let order = l.order.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(out, "level {:>2}  h = {:.4e}  error = {:.4e}  order = {order}", l.level, l.h, l.error);
            }
            let label = match s.reference {
                Reference::Oracle => "fitted order",
                Reference::Richardson => "fitted order (richardson)",
            };
            let _ = writeln!(out, "{label}: {:.3}", s.fitted_order);
            let _ = writeln!(out, "wrote {}", path.display());
            Ok(out)
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("charflow: {e}");
            e.exit_code()
        }
    }
}
