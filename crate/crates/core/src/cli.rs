//! Command-line front end: `solve`, `sweep` and `verify`.
//!
//! Exit codes: 0 success, 1 invalid flags or unknown suite, 2 when `solve` finds no
//! converged branch or `verify` has a failing check.

use std::io::Write;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::solver::{extremize_theta, solve_multistart, SolverOptions};
use crate::types::{
    HopfieldParams, ModelParams, QuadratureSpec, Result, RsbError, SkParams, SolveReport,
    DEFAULT_NODES,
};
use crate::verify::{format_table, run_suite, Suite, VerifyConfig};

/// Environment variable overriding the default node count per level.
pub const NODES_ENV: &str = "RSB_NODES";

/// Shortest round-trip decimal rendering.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Parser)]
#[command(name = "rsb", version, about = "Replica-symmetric and RSB solver for SK and Hopfield models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the self-consistency equations and print one JSON report per converged branch.
    Solve(SolveArgs),
    /// Solve on a parameter grid and print CSV.
    Sweep(SweepArgs),
    /// Run a verification suite and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Sk,
    Hopfield,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Breaking level K (0 = replica symmetric).
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub j0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub j: f64,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Comma-separated Parisi parameters, K of them.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Vec<f64>,
    /// Search the thetas for a stationary point of the solved pressure.
    #[arg(long)]
    pub extremize_theta: bool,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, default_value_t = crate::solver::DEFAULT_DAMPING)]
    pub damping: f64,
    #[arg(long, default_value_t = crate::solver::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = crate::solver::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Anderson mixing depth (0 = plain damped iteration).
    #[arg(long, default_value_t = 0)]
    pub anderson: usize,
    /// Seed for any Monte Carlo quadrature fallback.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: SolveArgs,
    /// Axis `name=start:stop:steps`; give one or two. Names: beta, j0, j, alpha, theta1..
    #[arg(long = "sweep", required = true)]
    pub axes: Vec<String>,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    /// Grid points solved concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// collapse, stationarity, enumeration, lemmas or histogram.
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// One grid axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || RsbError::InvalidParameter(format!("axis '{s}' is not name=start:stop:steps"));
        let (name, range) = s.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if steps == 0 || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
            return Err(RsbError::InvalidParameter(format!(
                "axis '{s}' needs steps >= 1 and stop >= start"
            )));
        }
        Ok(Axis { name: name.trim().to_string(), start, stop, steps })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.start];
        }
        (0..self.steps)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (self.steps - 1) as f64)
            .collect()
    }
}

/// Sweep grid: first axis outer, second inner (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub axis1: Axis,
    pub axis2: Option<Axis>,
}

impl SweepGrid {
    pub fn points(&self) -> Vec<Vec<(String, f64)>> {
        let mut out = Vec::new();
        for v1 in self.axis1.values() {
            match &self.axis2 {
                None => out.push(vec![(self.axis1.name.clone(), v1)]),
                Some(a2) => {
                    for v2 in a2.values() {
                        out.push(vec![(self.axis1.name.clone(), v1), (a2.name.clone(), v2)]);
                    }
                }
            }
        }
        out
    }
}

/// Quadrature spec from the flag, then the environment, then the default.
pub fn resolve_spec(nodes: Option<usize>, seed: u64) -> Result<QuadratureSpec> {
    let nodes = match nodes {
        Some(n) => n,
        None => match std::env::var(NODES_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| {
                RsbError::InvalidParameter(format!("{NODES_ENV}='{v}' is not a node count"))
            })?,
            Err(_) => DEFAULT_NODES,
        },
    };
    let spec = QuadratureSpec { mc_seed: seed, ..QuadratureSpec::with_nodes(nodes) };
    spec.validate()?;
    Ok(spec)
}

/// A fully resolved solve request.
#[derive(Debug, Clone)]
struct Problem {
    params: ModelParams,
    thetas: Vec<f64>,
    spec: QuadratureSpec,
    opts: SolverOptions,
    extremize: bool,
}

impl Problem {
    fn from_args(a: &SolveArgs, overrides: &[(String, f64)]) -> Result<Self> {
        let mut beta = a.beta;
        let (mut j0, mut j, mut alpha) = (a.j0, a.j, a.alpha);
        let mut thetas = a.theta.clone();
        for (name, v) in overrides {
            match (name.as_str(), a.model) {
                ("beta", _) => beta = Some(*v),
                ("j0", ModelArg::Sk) => j0 = *v,
                ("j", ModelArg::Sk) => j = *v,
                ("alpha", ModelArg::Hopfield) => alpha = *v,
                (other, _) => {
                    let idx = other
                        .strip_prefix("theta")
                        .and_then(|i| i.parse::<usize>().ok())
                        .filter(|&i| i >= 1 && i <= a.k)
                        .ok_or_else(|| {
                            RsbError::InvalidParameter(format!(
                                "cannot sweep '{other}' for this model and k"
                            ))
                        })?;
                    if thetas.len() != a.k {
                        return Err(RsbError::InvalidParameter(
                            "sweeping a theta needs --theta with k values".into(),
                        ));
                    }
                    thetas[idx - 1] = *v;
                }
            }
        }
        let beta = beta.ok_or_else(|| RsbError::InvalidParameter("--beta is required".into()))?;
        let params = match a.model {
            ModelArg::Sk => ModelParams::Sk(SkParams::new(beta, j0, j)?),
            ModelArg::Hopfield => ModelParams::Hopfield(HopfieldParams::new(beta, alpha)?),
        };
        if a.extremize_theta {
            if a.k == 0 {
                return Err(RsbError::InvalidParameter("--extremize-theta needs k >= 1".into()));
            }
        } else if thetas.len() != a.k {
            return Err(RsbError::InvalidParameter(format!(
                "--theta needs {} values for k = {}, got {}",
                a.k,
                a.k,
                thetas.len()
            )));
        }
        if !a.extremize_theta {
            crate::quadrature::check_thetas(&thetas)?;
        }
        let opts = SolverOptions {
            damping: a.damping,
            tol: a.tol,
            max_iter: a.max_iter,
            anderson: a.anderson,
            ..Default::default()
        };
        opts.validate()?;
        Ok(Problem {
            params,
            thetas,
            spec: resolve_spec(a.nodes, a.seed)?,
            opts,
            extremize: a.extremize_theta,
        })
    }

    /// Default brackets for the theta search: nested, increasing sub-intervals of [0.01, 0.99].
    fn brackets(k: usize) -> Vec<(f64, f64)> {
        (0..k).map(|i| (0.01 + 0.01 * i as f64, 0.99 - 0.01 * (k - 1 - i) as f64)).collect()
    }

    /// Solve, optionally after choosing the thetas. Returns the thetas used.
    fn solve(&self, k: usize) -> Result<(Vec<f64>, Vec<Result<SolveReport>>)> {
        let thetas = if self.extremize {
            let objective = |th: &[f64]| -> Result<f64> {
                solve_multistart(&self.params, th, &self.spec, &self.opts)
                    .into_iter()
                    .flatten()
                    .filter(|r| r.converged)
                    .map(|r| r.pressure)
                    .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
                    .ok_or_else(|| {
                        RsbError::DomainError(format!("no converged branch at thetas {th:?}"))
                    })
            };
            extremize_theta(objective, &Self::brackets(k), 1e-4)?.thetas
        } else {
            self.thetas.clone()
        };
        let reports = solve_multistart(&self.params, &thetas, &self.spec, &self.opts);
        Ok((thetas, reports))
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("invalid arguments");
            let _ = writeln!(err, "{line}");
            return 1;
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a, out, err),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Verify(a) => cmd_verify(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn io_err(e: std::io::Error) -> RsbError {
    RsbError::InvalidParameter(format!("i/o error: {e}"))
}

/// Converged reports as JSON lines, highest pressure first.
pub fn cmd_solve(a: &SolveArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let problem = Problem::from_args(a, &[])?;
    let (thetas, reports) = problem.solve(a.k)?;
    if problem.extremize {
        let _ = writeln!(err, "thetas = {thetas:?}");
    }
    let mut converged: Vec<SolveReport> =
        reports.iter().filter_map(|r| r.as_ref().ok()).filter(|r| r.converged).cloned().collect();
    converged.sort_by(|x, y| y.pressure.total_cmp(&x.pressure));
    for r in &converged {
        writeln!(out, "{}", serde_json::to_string(r).expect("report serializes")).map_err(io_err)?;
    }
    if converged.is_empty() {
        for (i, r) in reports.iter().enumerate() {
            let why = match r {
                Ok(r) => format!("not converged after {} iterations (residual {})", r.iterations, r.residual),
                Err(e) => e.to_string(),
            };
            let _ = writeln!(err, "branch {i}: {why}");
        }
        return Ok(2);
    }
    Ok(0)
}

fn csv_header(a: &SolveArgs) -> String {
    let k = a.k;
    let mut cols: Vec<String> = match a.model {
        ModelArg::Sk => vec!["beta".into(), "j0".into(), "j".into()],
        ModelArg::Hopfield => vec!["beta".into(), "alpha".into()],
    };
    cols.extend((1..=k).map(|i| format!("theta{i}")));
    cols.push("branch".into());
    cols.push("m".into());
    cols.extend((1..=k + 1).map(|i| format!("q{i}")));
    if a.model == ModelArg::Hopfield {
        cols.extend((1..=k + 1).map(|i| format!("p{i}")));
    }
    cols.extend(["pressure".into(), "residual".into(), "converged".into()]);
    cols.join(",")
}

fn num(x: f64) -> String {
    if x.is_finite() {
        fmt_f64(x)
    } else {
        String::new()
    }
}

fn csv_rows(a: &SolveArgs, problem: &Problem, thetas: &[f64], reports: &[Result<SolveReport>]) -> Vec<String> {
    let k = a.k;
    let mut lead: Vec<String> = match problem.params {
        ModelParams::Sk(p) => vec![num(p.beta), num(p.j0), num(p.j)],
        ModelParams::Hopfield(p) => vec![num(p.beta), num(p.alpha)],
    };
    if thetas.len() == k {
        lead.extend(thetas.iter().map(|t| num(*t)));
    } else {
        lead.extend(std::iter::repeat_n(String::new(), k));
    }
    let width = 1 + (k + 1) * if a.model == ModelArg::Hopfield { 2 } else { 1 } + 2;
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = lead.clone();
            row.push(i.to_string());
            match r {
                Ok(r) => {
                    row.push(num(r.ansatz.m));
                    row.extend(r.ansatz.qs.iter().map(|v| num(*v)));
                    if a.model == ModelArg::Hopfield {
                        row.extend(r.ansatz.ps.iter().map(|v| num(*v)));
                    }
                    row.push(num(r.pressure));
                    row.push(num(r.residual));
                    row.push(r.converged.to_string());
                }
                Err(_) => {
                    row.extend(std::iter::repeat_n(String::new(), width));
                    row.push("false".into());
                }
            }
            row.join(",")
        })
        .collect()
}

/// CSV over the grid; rows in grid order whatever the completion order.
pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    if a.axes.len() > 2 {
        return Err(RsbError::InvalidParameter("at most two --sweep axes".into()));
    }
    let axes = a.axes.iter().map(|s| Axis::parse(s)).collect::<Result<Vec<_>>>()?;
    let grid = SweepGrid { axis1: axes[0].clone(), axis2: axes.get(1).cloned() };
    if a.jobs == 0 {
        return Err(RsbError::InvalidParameter("--jobs must be >= 1".into()));
    }
    // validate every point before any work
    let points = grid.points();
    let problems = points
        .iter()
        .map(|pt| Problem::from_args(&a.base, pt))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| RsbError::InvalidParameter(e.to_string()))?;
    let blocks: Vec<Vec<String>> = pool.install(|| {
        problems
            .par_iter()
            .map(|p| match p.solve(a.base.k) {
                Ok((thetas, reports)) => csv_rows(&a.base, p, &thetas, &reports),
                Err(e) => csv_rows(&a.base, p, &[], &[Err(e)]),
            })
            .collect()
    });
    let mut text = csv_header(&a.base);
    text.push('\n');
    for line in blocks.into_iter().flatten() {
        text.push_str(&line);
        text.push('\n');
    }
    match &a.out {
        Some(path) => std::fs::write(path, text).map_err(io_err)?,
        None => out.write_all(text.as_bytes()).map_err(io_err)?,
    }
    Ok(0)
}

/// Table of checks; exit 0 iff all pass.
pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let suite: Suite = a.suite.parse()?;
    let cfg = VerifyConfig { n: a.n, samples: a.samples, sweeps: a.sweeps, nodes: a.nodes, seed: a.seed };
    let checks = run_suite(suite, &cfg)?;
    out.write_all(format_table(&checks).as_bytes()).map_err(io_err)?;
    Ok(if checks.iter().all(|c| c.pass) { 0 } else { 2 })
}
