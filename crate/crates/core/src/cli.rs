//! `douglas-lab` command-line front end.
//!
//! Every command writes a JSON report (to `--out` or stdout) shaped as
//!
//! ```text
//! { "header": { tool, version, timestamp_unix_s, wall_time_s },
//!   "schema": 1, "command", "config", "tolerances", "seed", "result" | "error" }
//! ```
//!
//! Everything outside `header` is a pure function of the inputs. The one
//! exception to JSON output is `counterexample sweep`, which writes CSV.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::counterexample;
use crate::douglas::{self, MixedProblem};
use crate::error::{Error, Result};
use crate::heat::{self, HeatConfig, HeatModel, StateField};
use crate::io;
use crate::linop::Tolerances;
use crate::suite;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "douglas-lab";

#[derive(Debug, Parser)]
#[command(name = TOOL_NAME, version, about = "Range inclusion, Douglas factorization and mixed controllability experiments")]
pub struct Cli {
    /// Key-value config file (TOML) with rank_rel, residual_rel and seed.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rank_rel: Option<f64>,
    #[arg(long, global = true)]
    pub residual_rel: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Report destination; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inclusion tests and factorizations on Matrix Market inputs.
    #[command(subcommand)]
    Douglas(DouglasCmd),
    /// Truncations of the family where the necessary conditions hold but the goal fails.
    #[command(subcommand)]
    Counterexample(CounterexampleCmd),
    /// Discretized heat cascade.
    #[command(subcommand)]
    Heat(HeatCmd),
    /// Seeded batch suites.
    #[command(subcommand)]
    Suite(SuiteCmd),
}

#[derive(Debug, Subcommand)]
pub enum DouglasCmd {
    /// Range inclusion, kernel inclusion and majorization constant for (A, B).
    Check { a: PathBuf, b: PathBuf },
    /// Minimal-norm factor C with A = B C.
    Factor {
        a: PathBuf,
        b: PathBuf,
        /// Also write C as Matrix Market.
        #[arg(long)]
        factor_out: Option<PathBuf>,
    },
    /// Necessary-and-sufficient check of the mixed goal.
    MixedCheck(MixedFiles),
    /// Control h2 for a given h1.
    MixedSolve {
        #[command(flatten)]
        files: MixedFiles,
        #[arg(long)]
        h1: PathBuf,
        #[arg(long)]
        eps: f64,
    },
}

#[derive(Debug, Args)]
pub struct MixedFiles {
    pub a1: PathBuf,
    pub a2: PathBuf,
    pub b1: PathBuf,
    pub b2: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CounterexampleCmd {
    /// CSV sweep over truncation dimensions.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256")]
        dims: Vec<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct HeatArgs {
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 60)]
    pub m: usize,
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    /// Control interval as `a:b`.
    #[arg(long, default_value = "0.3:0.8", value_parser = parse_interval)]
    pub omega: (f64, f64),
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
}

impl HeatArgs {
    pub fn config(&self) -> Result<HeatConfig> {
        HeatConfig::new(self.n, self.m, self.t, self.omega, self.theta)
    }
}

fn parse_interval(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got {s:?}"))?;
    let a = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

#[derive(Debug, Subcommand)]
pub enum HeatCmd {
    /// Control with y(T) = 0 and ‖z(T) − zT‖ ≤ eps, verified by resimulation.
    Synthesize {
        #[command(flatten)]
        heat: HeatArgs,
        /// Initial y (defaults to sin(πx)).
        #[arg(long)]
        y0: Option<PathBuf>,
        /// Initial z (defaults to 0).
        #[arg(long)]
        z0: Option<PathBuf>,
        /// Target for z(T) (defaults to 0).
        #[arg(long)]
        ztarget: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-2)]
        eps: f64,
        /// Control as an M × n_omega Matrix Market array (row = time step).
        #[arg(long)]
        control_out: Option<PathBuf>,
        /// Resimulated y trajectory as CSV (time, node, value).
        #[arg(long)]
        y_trajectory: Option<PathBuf>,
        /// Resimulated z trajectory as CSV (time, node, value).
        #[arg(long)]
        z_trajectory: Option<PathBuf>,
    },
    /// Transpose identities and adjoint-PDE consistency of the assembled maps.
    AdjointCheck {
        #[command(flatten)]
        heat: HeatArgs,
        #[arg(long, default_value_t = 20)]
        probes: usize,
    },
    /// Mode-decay errors and adjoint deviation under (N, M) doubling.
    Convergence {
        #[command(flatten)]
        heat: HeatArgs,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 3)]
        modes: usize,
        #[arg(long, default_value_t = 20)]
        probes: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SuiteSize {
    /// Instances per planted class.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub max_dim: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum SuiteCmd {
    /// Range inclusion against planted labels and factorization residuals.
    Theorem1(SuiteSize),
    /// Kernel inclusion of the adjoints against range inclusion.
    Theorem2(SuiteSize),
    /// Mixed check against planted labels and the solver.
    Mixed(SuiteSize),
    /// Counterexample sweep with the sufficient condition alongside.
    Gap {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256")]
        dims: Vec<usize>,
    },
}

/// Optional config file contents; flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub rank_rel: Option<f64>,
    pub residual_rel: Option<f64>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config file: {e}")))
    }
}

/// Settings resolved from defaults, config file and flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunConfig {
    pub tolerances: Tolerances,
    pub seed: u64,
}

impl RunConfig {
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(path) => ConfigFile::parse(&fs::read_to_string(path)?)?,
            None => ConfigFile::default(),
        };
        let defaults = Tolerances::default();
        let tolerances = Tolerances::new(
            cli.rank_rel.or(file.rank_rel).unwrap_or(defaults.rank_rel),
            cli.residual_rel.or(file.residual_rel).unwrap_or(defaults.residual_rel),
        )?;
        Ok(RunConfig {
            tolerances,
            seed: cli.seed.or(file.seed).unwrap_or(0),
        })
    }
}

/// Outcome of a command: a JSON result or CSV text, plus an optional
/// failure that still carries a result worth reporting.
enum Output {
    Json {
        command: String,
        config: Value,
        result: Value,
    },
    Csv(String),
}

struct Outcome {
    output: Output,
    failure: Option<Error>,
}

impl Outcome {
    fn json(command: &str, config: Value, result: Value) -> Self {
        Outcome {
            output: Output::Json {
                command: command.to_string(),
                config,
                result,
            },
            failure: None,
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Parse(format!("serializing report: {e}")))
}

fn load_problem(files: &MixedFiles, tol: Tolerances) -> Result<MixedProblem> {
    MixedProblem::new(
        io::read_operator(&files.a1)?,
        io::read_operator(&files.a2)?,
        io::read_operator(&files.b1)?,
        io::read_operator(&files.b2)?,
        tol,
    )
}

fn paths_value(paths: &[(&str, &Path)]) -> Value {
    Value::Object(
        paths
            .iter()
            .map(|(k, p)| (k.to_string(), Value::String(p.display().to_string())))
            .collect(),
    )
}

fn run_douglas(cmd: &DouglasCmd, rc: &RunConfig) -> Result<Outcome> {
    let tol = &rc.tolerances;
    match cmd {
        DouglasCmd::Check { a, b } => {
            let (ao, bo) = (io::read_operator(a)?, io::read_operator(b)?);
            let range = douglas::range_inclusion(&ao, &bo, tol)?;
            let kernel = douglas::kernel_inclusion(&ao, &bo, tol)?;
            let constant = douglas::majorization_constant(&ao, &bo, tol)?;
            Ok(Outcome::json(
                "douglas check",
                paths_value(&[("a", a), ("b", b)]),
                json!({
                    "inclusion": range.holds,
                    "range_inclusion": range,
                    "kernel_inclusion": kernel,
                    "majorization_constant": constant,
                }),
            ))
        }
        DouglasCmd::Factor { a, b, factor_out } => {
            let (ao, bo) = (io::read_operator(a)?, io::read_operator(b)?);
            let c = douglas::douglas_factor(&ao, &bo, tol)?;
            if let Some(path) = factor_out {
                io::write_operator(path, &c)?;
            }
            let residual = crate::linop::spectral_norm(&(bo.matrix() * c.matrix() - ao.matrix()));
            Ok(Outcome::json(
                "douglas factor",
                paths_value(&[("a", a), ("b", b)]),
                json!({
                    "rows": c.rows(),
                    "cols": c.cols(),
                    "factor_norm": c.norm(),
                    "factorization_residual": residual,
                    "factor": matrix_rows(c.matrix()),
                }),
            ))
        }
        DouglasCmd::MixedCheck(files) => {
            let p = load_problem(files, *tol)?;
            let report = douglas::mixed_check(&p)?;
            let propp = douglas::check_propp(&p)?;
            Ok(Outcome::json(
                "douglas mixed-check",
                mixed_paths(files),
                json!({ "check": to_value(&report)?, "propp": to_value(&propp)? }),
            ))
        }
        DouglasCmd::MixedSolve { files, h1, eps } => {
            let p = load_problem(files, *tol)?;
            let h = io::read_vector(h1)?;
            let report = douglas::mixed_solve(&p, &h, *eps)?;
            let mut config = mixed_paths(files);
            config["h1"] = Value::String(h1.display().to_string());
            config["eps"] = json!(eps);
            let failure = (!report.epsilon_met).then_some(Error::EpsilonNotMet {
                achieved: report.approx_residual,
                requested: *eps,
            });
            let mut out = Outcome::json("douglas mixed-solve", config, to_value(&report)?);
            out.failure = failure;
            Ok(out)
        }
    }
}

fn mixed_paths(files: &MixedFiles) -> Value {
    paths_value(&[
        ("a1", &files.a1),
        ("a2", &files.a2),
        ("b1", &files.b1),
        ("b2", &files.b2),
    ])
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn write_trajectory(path: &Path, field: &StateField) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "node", "value"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for (t, x, v) in field.rows() {
        w.write_record([format!("{t:e}"), format!("{x:e}"), format!("{v:e}")])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

fn vector_or(path: &Option<PathBuf>, n: usize, default: impl FnOnce() -> DVector<f64>) -> Result<DVector<f64>> {
    match path {
        Some(p) => {
            let v = io::read_vector(p)?;
            if v.len() != n {
                return Err(Error::dims("heat input vector", n, v.len()));
            }
            Ok(v)
        }
        None => Ok(default()),
    }
}

fn run_heat(cmd: &HeatCmd, rc: &RunConfig) -> Result<Outcome> {
    match cmd {
        HeatCmd::Synthesize {
            heat: args,
            y0,
            z0,
            ztarget,
            eps,
            control_out,
            y_trajectory,
            z_trajectory,
        } => {
            let cfg = args.config()?;
            let model = HeatModel::assemble(cfg)?;
            let n = cfg.n;
            let y0v = vector_or(y0, n, || model.sine_mode(1))?;
            let z0v = vector_or(z0, n, || DVector::zeros(n))?;
            let ztv = vector_or(ztarget, n, || DVector::zeros(n))?;
            let result = heat::synthesize_control(&model, &y0v, &z0v, &ztv, *eps, &rc.tolerances)?;
            if let Some(path) = control_out {
                let values = result.control.values();
                let m = DMatrix::from_fn(cfg.m, model.n_omega(), |k, j| values[k * model.n_omega() + j]);
                fs::write(path, io::format_matrix_market(&m))?;
            }
            if y_trajectory.is_some() || z_trajectory.is_some() {
                let sim = heat::simulate_forward(&model, &y0v, &z0v, &result.control)?;
                if let Some(path) = y_trajectory {
                    write_trajectory(path, &sim.y)?;
                }
                if let Some(path) = z_trajectory {
                    write_trajectory(path, &sim.z)?;
                }
            }
            let mut config = to_value(&cfg)?;
            config["eps"] = json!(eps);
            config["omega_nodes"] = json!(model.n_omega());
            config["control_dim"] = json!(model.control_dim());
            for (key, path) in [("y0", y0), ("z0", z0), ("ztarget", ztarget)] {
                config[key] = path
                    .as_ref()
                    .map_or(Value::Null, |p| Value::String(p.display().to_string()));
            }
            Ok(Outcome::json("heat synthesize", config, to_value(&result)?))
        }
        HeatCmd::AdjointCheck { heat: args, probes } => {
            let model = HeatModel::assemble(args.config()?)?;
            let report = heat::adjoint_check(&model, *probes, rc.seed)?;
            Ok(Outcome::json(
                "heat adjoint-check",
                to_value(&model.config)?,
                to_value(&report)?,
            ))
        }
        HeatCmd::Convergence {
            heat: args,
            levels,
            modes,
            probes,
        } => {
            let cfg = args.config()?;
            let report = heat::convergence(cfg, *levels, *modes, *probes, rc.seed)?;
            Ok(Outcome::json("heat convergence", to_value(&cfg)?, to_value(&report)?))
        }
    }
}

fn run_suite(cmd: &SuiteCmd, rc: &RunConfig) -> Result<Outcome> {
    let tol = &rc.tolerances;
    let sizes = |s: &SuiteSize, count: usize, dim: usize| (s.count.unwrap_or(count), s.max_dim.unwrap_or(dim));
    match cmd {
        SuiteCmd::Theorem1(s) => {
            let (count, dim) = sizes(s, 500, 40);
            let r = suite::theorem1(rc.seed, count, dim, tol)?;
            Ok(Outcome::json(
                "suite theorem1",
                json!({"count": count, "max_dim": dim}),
                to_value(&r)?,
            ))
        }
        SuiteCmd::Theorem2(s) => {
            let (count, dim) = sizes(s, 500, 40);
            let r = suite::theorem2(rc.seed, count, dim, tol)?;
            Ok(Outcome::json(
                "suite theorem2",
                json!({"count": count, "max_dim": dim}),
                to_value(&r)?,
            ))
        }
        SuiteCmd::Mixed(s) => {
            let (count, dim) = sizes(s, 300, 12);
            let r = suite::mixed(rc.seed, count, dim, tol)?;
            Ok(Outcome::json(
                "suite mixed",
                json!({"count": count, "max_dim": dim}),
                to_value(&r)?,
            ))
        }
        SuiteCmd::Gap { dims } => {
            let r = suite::gap(dims, tol)?;
            Ok(Outcome::json("suite gap", json!({"dims": dims}), to_value(&r)?))
        }
    }
}

fn dispatch(cli: &Cli, rc: &RunConfig) -> Result<Outcome> {
    match &cli.command {
        Command::Douglas(cmd) => run_douglas(cmd, rc),
        Command::Counterexample(CounterexampleCmd::Sweep { dims }) => {
            let report = counterexample::sweep(dims, rc.tolerances)?;
            Ok(Outcome {
                output: Output::Csv(report.to_csv()?),
                failure: None,
            })
        }
        Command::Heat(cmd) => run_heat(cmd, rc),
        Command::Suite(cmd) => run_suite(cmd, rc),
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Douglas(DouglasCmd::Check { .. }) => "douglas check",
        Command::Douglas(DouglasCmd::Factor { .. }) => "douglas factor",
        Command::Douglas(DouglasCmd::MixedCheck(_)) => "douglas mixed-check",
        Command::Douglas(DouglasCmd::MixedSolve { .. }) => "douglas mixed-solve",
        Command::Counterexample(_) => "counterexample sweep",
        Command::Heat(HeatCmd::Synthesize { .. }) => "heat synthesize",
        Command::Heat(HeatCmd::AdjointCheck { .. }) => "heat adjoint-check",
        Command::Heat(HeatCmd::Convergence { .. }) => "heat convergence",
        Command::Suite(SuiteCmd::Theorem1(_)) => "suite theorem1",
        Command::Suite(SuiteCmd::Theorem2(_)) => "suite theorem2",
        Command::Suite(SuiteCmd::Mixed(_)) => "suite mixed",
        Command::Suite(SuiteCmd::Gap { .. }) => "suite gap",
    }
}

fn header(started: Instant) -> Value {
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    json!({
        "tool": TOOL_NAME,
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix_s": timestamp,
        "wall_time_s": started.elapsed().as_secs_f64(),
    })
}

fn error_value(e: &Error) -> Value {
    json!({ "message": e.to_string(), "exit_code": e.exit_code() })
}

fn envelope(command: &str, rc: &RunConfig, config: Value, body: (&str, Value), started: Instant) -> Value {
    json!({
        "header": header(started),
        "schema": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "tolerances": rc.tolerances,
        "seed": rc.seed,
        body.0: body.1,
    })
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => println!("{}", text.trim_end()),
    }
    Ok(())
}

fn render(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: &Cli) -> i32 {
    let started = Instant::now();
    let rc = match RunConfig::resolve(cli) {
        Ok(rc) => rc,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let name = command_name(&cli.command);
    let result = dispatch(cli, &rc).and_then(|outcome| {
        match outcome.output {
            Output::Json {
                command,
                config,
                result,
            } => {
                let body = match &outcome.failure {
                    Some(e) => json!({ "partial": result, "failure": error_value(e) }),
                    None => result,
                };
                let key = if outcome.failure.is_some() { "error" } else { "result" };
                emit(
                    &cli.out,
                    &render(&envelope(&command, &rc, config, (key, body), started)),
                )?;
            }
            Output::Csv(text) => emit(&cli.out, &text)?,
        }
        Ok(outcome.failure)
    });
    match result {
        Ok(None) => 0,
        Ok(Some(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            if cli.out.is_some() && !matches!(e, Error::Io(_)) && !matches!(cli.command, Command::Counterexample(_)) {
                let v = envelope(name, &rc, Value::Null, ("error", error_value(&e)), started);
                let _ = emit(&cli.out, &render(&v));
            }
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            code
        }
    }
}
