//! `volterra` command-line front end.
//!
//! Exit codes: 0 success (or certified, for `check`), 1 numerical failure
//! or not certified, 2 bad configuration or input.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use volterra_core::hypothesis::{check_a3, check_a4, check_example1, check_example2};
use volterra_core::nonlinear_solver::multistart_uniqueness_seeded;
use volterra_core::sensitivity::{fd_discrepancy, sensitivity_at};
use volterra_core::{
    apply_v, example1_kernel, example2_linw_atan, linear_kernel, solve_newton, zero_kernel, Grid,
    GridFunction, HypothesisReport, KernelSpec, NeumannReport, SampledTable, SolveReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Step of the central difference recorded in sensitivity reports.
pub const FD_EPSILON: f64 = 1e-3;
/// Number of multistart runs performed alongside every solve.
pub const MULTISTART_RUNS: usize = 5;
pub const MIN_CELLS: usize = 16;

/// Errors split by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Run(_) => EXIT_FAILED,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e:#}"),
            Failure::Run(e) => write!(f, "{e:#}"),
        }
    }
}

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn run(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn run(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Run(e.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhsConfig {
    /// One of `t`, `t^2`, `sin`, all in the shifted variable `t − α`.
    Named(String),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kernel: KernelConfig,
    pub interval: [f64; 2],
    pub n_cells: usize,
    pub rhs: RhsConfig,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

/// A validated configuration with everything resolved.
pub struct Problem {
    pub config: ProblemConfig,
    pub kernel: KernelSpec,
    pub grid: Grid,
    pub rhs: GridFunction,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.n_cells < MIN_CELLS {
            bail!("n_cells must be at least {MIN_CELLS}");
        }
        if !(self.tol > 0.0) {
            bail!("tol must be positive");
        }
        let [a, b] = self.interval;
        if !(a.is_finite() && b.is_finite() && a < b) {
            bail!("interval must satisfy alpha < beta");
        }
        Ok(())
    }

    pub fn grid(&self) -> anyhow::Result<Grid> {
        Ok(Grid::new(self.interval[0], self.interval[1], self.n_cells)?)
    }

    /// Resolves kernel and right-hand side; relative CSV paths are taken
    /// from `base_dir`.
    pub fn resolve(self, base_dir: &Path) -> anyhow::Result<Problem> {
        self.validate()?;
        let grid = self.grid()?;
        let kernel = build_kernel(&self.kernel, self.interval)?;
        let rhs = build_rhs(&self.rhs, grid, base_dir)?;
        Ok(Problem {
            config: self,
            kernel,
            grid,
            rhs,
        })
    }
}

fn param(cfg: &KernelConfig, allowed: &[&str], key: &str) -> anyhow::Result<f64> {
    if let Some(extra) = cfg.params.keys().find(|k| !allowed.contains(&k.as_str())) {
        bail!("kernel `{}` has no parameter `{extra}`", cfg.name);
    }
    let v = *cfg
        .params
        .get(key)
        .ok_or_else(|| anyhow!("kernel `{}` needs parameter `{key}`", cfg.name))?;
    if !v.is_finite() {
        bail!("parameter `{key}` must be finite");
    }
    Ok(v)
}

fn no_params(cfg: &KernelConfig) -> anyhow::Result<()> {
    if let Some(extra) = cfg.params.keys().next() {
        bail!("kernel `{}` has no parameter `{extra}`", cfg.name);
    }
    Ok(())
}

/// Built-in kernels: `zero`, `linear {lambda}`, `example1 {a_bar}`,
/// `example2` (`w(s) = s`, `z = arctan`, horizon `β − α`).
pub fn build_kernel(cfg: &KernelConfig, [alpha, beta]: [f64; 2]) -> anyhow::Result<KernelSpec> {
    let kernel = match cfg.name.as_str() {
        "zero" => {
            no_params(cfg)?;
            zero_kernel()
        }
        "linear" => linear_kernel(param(cfg, &["lambda"], "lambda")?),
        "example1" => example1_kernel(param(cfg, &["a_bar"], "a_bar")?),
        "example2" => {
            no_params(cfg)?;
            example2_linw_atan(beta - alpha)?
        }
        other => bail!("unknown kernel `{other}` (expected zero, linear, example1, example2)"),
    };
    Ok(kernel.on_interval(alpha, beta))
}

pub fn build_rhs(cfg: &RhsConfig, grid: Grid, base_dir: &Path) -> anyhow::Result<GridFunction> {
    let alpha = grid.alpha();
    let f: fn(f64) -> f64 = match cfg {
        RhsConfig::Csv(src) => {
            let path = base_dir.join(&src.csv);
            let file =
                fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let table = SampledTable::read_csv(file)
                .with_context(|| format!("reading {}", path.display()))?;
            if table.dim != 1 {
                bail!(
                    "right-hand side CSV must have one component, found {}",
                    table.dim
                );
            }
            return Ok(table.resample(grid)?);
        }
        RhsConfig::Named(name) => match name.as_str() {
            "t" => |s| s,
            "t^2" => |s| s * s,
            "sin" => f64::sin,
            other => bail!("unknown rhs `{other}` (expected t, t^2, sin or {{\"csv\": path}})"),
        },
    };
    Ok(GridFunction::from_scalar_fn(grid, |t| f(t - alpha))?)
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedCheck {
    pub check: String,
    pub verdict: String,
    #[serde(flatten)]
    pub report: HypothesisReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisSection {
    pub certified: bool,
    pub reports: Vec<NamedCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSection {
    pub solution_csv: String,
    pub round_trip_residual: f64,
    #[serde(flatten)]
    pub report: SolveReport,
    pub uniqueness: SolveReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivitySection {
    pub direction_csv: String,
    pub sensitivity_csv: String,
    pub linear: NeumannReport,
    pub fd_epsilon: f64,
    pub fd_discrepancy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridMeta {
    pub alpha: f64,
    pub beta: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub grid: GridMeta,
    pub seed: u64,
    pub version: String,
    pub kernel: KernelConfig,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub hypothesis: HypothesisSection,
    pub solve: Option<SolveSection>,
    pub sensitivity: Option<SensitivitySection>,
    pub meta: Meta,
}

fn meta(problem: &Problem) -> Meta {
    Meta {
        grid: GridMeta {
            alpha: problem.grid.alpha(),
            beta: problem.grid.beta(),
            n_cells: problem.grid.n_cells(),
        },
        seed: problem.config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        kernel: problem.config.kernel.clone(),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    }
}

/// Every check the kernel's declared bounds allow, plus the closed forms of
/// the two worked examples where they apply.
pub fn run_checks(problem: &Problem) -> Result<HypothesisSection, Failure> {
    let k = &problem.kernel;
    let g = &problem.grid;
    let mut reports = Vec::new();
    let mut push = |name: &str, report: HypothesisReport| {
        reports.push(NamedCheck {
            check: name.to_string(),
            verdict: report.verdict().to_string(),
            report,
        })
    };
    if k.bounds().has_diagonal_form() {
        push("A3", check_a3(k, g).run()?);
    }
    if k.bounds().has_growth_form() {
        push("A4", check_a4(k, g).run()?);
    }
    let cfg = &problem.config;
    match cfg.kernel.name.as_str() {
        "example1" if cfg.interval == [0.0, 1.0] => {
            push(
                "example1_closed_form",
                check_example1(cfg.kernel.params["a_bar"]),
            );
        }
        "example2" => {
            let one = |_: f64| 1.0;
            push(
                "example2_closed_form",
                check_example2(&one, 1.0, g.length(), g).run()?,
            );
        }
        _ => {}
    }
    let certified = reports.iter().any(|r| r.report.passed);
    Ok(HypothesisSection { certified, reports })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).run()?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .run()
}

fn write_csv(path: &Path, x: &GridFunction) -> Result<(), Failure> {
    let file = fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .run()?;
    x.write_csv(std::io::BufWriter::new(file)).run()
}

/// `<dir>/<stem>.report.json` next to an output CSV.
pub fn report_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.report.json"))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_problem(config_path: &Path) -> Result<Problem, Failure> {
    let base = config_path.parent().unwrap_or(Path::new("."));
    ProblemConfig::load(config_path)
        .and_then(|c| c.resolve(base))
        .config()
}

fn warn_uncertified(h: &HypothesisSection) {
    if !h.certified {
        eprintln!(
            "warning: well-posedness conditions not certified for this kernel; solving anyway"
        );
    }
}

/// Newton solve plus the multistart probe; fails on non-convergence.
pub fn run_solve(
    problem: &Problem,
    solution_csv: &str,
) -> Result<(GridFunction, SolveSection), Failure> {
    let cfg = &problem.config;
    let (x, report) =
        solve_newton(&problem.kernel, &problem.rhs, None, cfg.tol, cfg.max_iter).run()?;
    report.ensure_converged().run()?;
    let round_trip = apply_v(&problem.kernel, &x)
        .and_then(|v| v.ac_distance(&problem.rhs))
        .run()?;
    let uniqueness = multistart_uniqueness_seeded(
        &problem.kernel,
        &problem.rhs,
        MULTISTART_RUNS,
        cfg.tol,
        cfg.max_iter,
        cfg.seed,
    )
    .run()?;
    Ok((
        x,
        SolveSection {
            solution_csv: solution_csv.to_string(),
            round_trip_residual: round_trip,
            report,
            uniqueness,
        },
    ))
}

/// Sensitivity at the computed solution plus the finite-difference check.
pub fn run_sensitivity(
    problem: &Problem,
    x: &GridFunction,
    solve: &SolveSection,
    h: &GridFunction,
    names: (&str, &str),
) -> Result<(GridFunction, SensitivitySection), Failure> {
    let sens = sensitivity_at(
        &problem.kernel,
        x.clone(),
        solve.report.clone(),
        h,
        problem.config.tol,
    )
    .run()?;
    let fd = fd_discrepancy(&problem.kernel, &problem.rhs, &sens, h, FD_EPSILON).run()?;
    Ok((
        sens.direction.clone(),
        SensitivitySection {
            direction_csv: names.0.to_string(),
            sensitivity_csv: names.1.to_string(),
            linear: sens.linear,
            fd_epsilon: FD_EPSILON,
            fd_discrepancy: fd,
        },
    ))
}

/// `volterra check`: prints the report, exit 0 iff certified.
pub fn cmd_check(config_path: &Path, report_out: Option<&Path>) -> Result<i32, Failure> {
    let problem = load_problem(config_path)?;
    let hypothesis = run_checks(&problem)?;
    let certified = hypothesis.certified;
    let report = RunReport {
        hypothesis,
        solve: None,
        sensitivity: None,
        meta: meta(&problem),
    };
    match report_out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).run()?),
    }
    Ok(if certified { EXIT_OK } else { EXIT_FAILED })
}

/// `volterra solve`: solution CSV at `out`, report next to it.
pub fn cmd_solve(config_path: &Path, out: &Path) -> Result<i32, Failure> {
    let problem = load_problem(config_path)?;
    let hypothesis = run_checks(&problem)?;
    warn_uncertified(&hypothesis);
    let (x, solve) = run_solve(&problem, &file_name(out))?;
    write_csv(out, &x)?;
    write_json(
        &report_path(out),
        &RunReport {
            hypothesis,
            solve: Some(solve),
            sensitivity: None,
            meta: meta(&problem),
        },
    )?;
    Ok(EXIT_OK)
}

fn read_direction(path: &Path, grid: Grid) -> Result<GridFunction, Failure> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .config()?;
    let h = GridFunction::read_csv(file)
        .with_context(|| format!("reading {}", path.display()))
        .config()?;
    if h.grid() != &grid {
        return Err(Failure::Config(anyhow!(
            "direction {} is not sampled on the problem grid",
            path.display()
        )));
    }
    Ok(h)
}

/// `volterra sensitivity`: `V′(x_a)⁻¹h` as CSV at `out`, report next to it.
pub fn cmd_sensitivity(config_path: &Path, direction: &Path, out: &Path) -> Result<i32, Failure> {
    let problem = load_problem(config_path)?;
    let h = read_direction(direction, problem.grid)?;
    let hypothesis = run_checks(&problem)?;
    warn_uncertified(&hypothesis);
    let (x, solve) = run_solve(&problem, "")?;
    let (s, section) = run_sensitivity(
        &problem,
        &x,
        &solve,
        &h,
        (&file_name(direction), &file_name(out)),
    )?;
    write_csv(out, &s)?;
    write_json(
        &report_path(out),
        &RunReport {
            hypothesis,
            solve: Some(solve),
            sensitivity: Some(section),
            meta: meta(&problem),
        },
    )?;
    Ok(EXIT_OK)
}

pub const DEMOS: [&str; 2] = ["example1", "example2"];

/// Canonical configuration of a demo.
pub fn demo_config(name: &str) -> Option<ProblemConfig> {
    let (kernel, beta) = match name {
        "example1" => (
            KernelConfig {
                name: "example1".into(),
                params: BTreeMap::from([("a_bar".to_string(), 1.0)]),
            },
            1.0,
        ),
        "example2" => (
            KernelConfig {
                name: "example2".into(),
                params: BTreeMap::new(),
            },
            0.9,
        ),
        _ => return None,
    };
    Some(ProblemConfig {
        kernel,
        interval: [0.0, beta],
        n_cells: 500,
        rhs: RhsConfig::Named("t".into()),
        tol: 1e-10,
        max_iter: 50,
        seed: 1,
    })
}

/// `volterra demo`: check, solve and sensitivity (direction `h(t) = t`) with
/// canonical parameters; artifacts go to `out_dir`.
pub fn cmd_demo(name: &str, out_dir: &Path) -> Result<i32, Failure> {
    let config = demo_config(name).ok_or_else(|| {
        Failure::Config(anyhow!(
            "unknown demo `{name}` (expected one of {})",
            DEMOS.join(", ")
        ))
    })?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .run()?;
    write_json(&out_dir.join("config.json"), &config)?;
    let problem = config.resolve(out_dir).config()?;
    let hypothesis = run_checks(&problem)?;
    let (x, solve) = run_solve(&problem, "solution.csv")?;
    write_csv(&out_dir.join("solution.csv"), &x)?;
    let h = problem.rhs.clone();
    write_csv(&out_dir.join("direction.csv"), &h)?;
    let (s, sens) = run_sensitivity(
        &problem,
        &x,
        &solve,
        &h,
        ("direction.csv", "sensitivity.csv"),
    )?;
    write_csv(&out_dir.join("sensitivity.csv"), &s)?;
    let certified = hypothesis.certified;
    write_json(
        &out_dir.join("report.json"),
        &RunReport {
            hypothesis,
            solve: Some(solve),
            sensitivity: Some(sens),
            meta: meta(&problem),
        },
    )?;
    if !certified {
        eprintln!("demo `{name}`: hypothesis check failed");
        return Ok(EXIT_FAILED);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Parser)]
#[command(
    name = "volterra",
    version,
    about = "Nonlinear Volterra integral equations on AC0^2"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the well-posedness conditions for a problem.
    Check {
        config: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Solve V(x) = rhs and write the solution CSV.
    Solve {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Derivative of the solution in the direction read from a CSV.
    Sensitivity {
        config: PathBuf,
        #[arg(long)]
        direction: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Reproduce one of the worked examples.
    Demo {
        name: String,
        /// Defaults to ./demo_out/<name>.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Check { config, report } => cmd_check(config, report.as_deref()),
        Command::Solve { config, out } => cmd_solve(config, out),
        Command::Sensitivity {
            config,
            direction,
            out,
        } => cmd_sensitivity(config, direction, out),
        Command::Demo { name, out_dir } => {
            let dir = out_dir
                .clone()
                .unwrap_or_else(|| Path::new("demo_out").join(name));
            cmd_demo(name, &dir)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"kernel": {"name": "linear", "params": {"lambda": 0.5}},
        "interval": [0, 1], "n_cells": 32, "rhs": "t", "tol": 1e-10, "max_iter": 20, "seed": 3}"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ProblemConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.rhs, RhsConfig::Named("t".into()));
        let p = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(p.grid.n_cells(), 32);
        assert_eq!(p.rhs.at(32)[0], 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            BASE.replace("\"seed\": 3", "\"seed\": 3, \"extra\": 1"),
            BASE.replace("32", "8"),
            BASE.replace("1e-10", "0"),
            BASE.replace("[0, 1]", "[1, 0]"),
            BASE.replace("\"seed\": 3", ""),
        ];
        for text in &bad {
            assert!(ProblemConfig::from_json(text).is_err(), "{text}");
        }
        let resolve_bad = [
            BASE.replace("linear", "quadratic"),
            BASE.replace("lambda", "mu"),
            BASE.replace("\"t\"", "\"cos\""),
            BASE.replace("\"t\"", "{\"csv\": \"/nonexistent/file.csv\"}"),
        ];
        for text in &resolve_bad {
            let cfg = ProblemConfig::from_json(text).unwrap();
            assert!(cfg.resolve(Path::new(".")).is_err(), "{text}");
        }
    }

    #[test]
    fn shifted_rhs_and_interval_kernels() {
        let text = BASE.replace("[0, 1]", "[1, 2]").replace("\"t\"", "\"t^2\"");
        let p = ProblemConfig::from_json(&text)
            .unwrap()
            .resolve(Path::new("."))
            .unwrap();
        assert_eq!(p.rhs.at(0)[0], 0.0);
        assert!((p.rhs.at(32)[0] - 1.0).abs() < 1e-15);
        assert_eq!(p.kernel.domain().alpha, 1.0);
    }

    #[test]
    fn demo_configs_are_valid() {
        for name in DEMOS {
            let cfg = demo_config(name).unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ProblemConfig::from_json(&text).unwrap(), cfg);
        }
        assert!(demo_config("example3").is_none());
    }

    #[test]
    fn report_path_sits_next_to_output() {
        assert_eq!(
            report_path(Path::new("a/b/out.csv")),
            Path::new("a/b/out.report.json")
        );
    }
}
