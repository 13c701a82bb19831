//! Command-line front end: argument and config-file parsing, P-sweeps over
//! every pipeline, and CSV output with a JSON sidecar for diagnostics.
//!
//! Flags override values read from `--config`. Rows are computed in
//! parallel but merged in sweep order, so output bytes never depend on the
//! worker count.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::action::{action_refined, ActionConfig, ActionQuery};
use crate::assignment::empirical_d;
use crate::baselines::{minmax_h_with, oracle_1d, MinMaxConfig};
use crate::dirichlet::{solve_cell_problem, DensityField, SolverConfig};
use crate::error::{Error, Result};
use crate::potential::TrigPotential;
use crate::sampling::{potential_mean, sample_density, SamplingScheme};
use crate::search::{effective_hamiltonian, SearchConfig};
use crate::torus::{canonicalize, TorusPoint};

#[derive(Debug, Parser)]
#[command(name = "effham", version, about = "Effective Hamiltonians of periodic mechanical Lagrangians")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transport search estimate of H(P) along a j schedule.
    Effham(CommonArgs),
    /// Cell problem: F(rho, P), rotation vector and solver residual.
    Dirichlet(CommonArgs),
    /// Grid min-max upper bound, plus the quadrature oracle in 1-D.
    Baseline(CommonArgs),
    /// Empirical H of sampled measures against int Xi drho + F(rho, P).
    Crosscheck(CrosscheckArgs),
    /// One action query.
    ActionEval(ActionArgs),
    /// Transport value of a fixed point set.
    AssignEval(AssignArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run file; flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Potential as a TOML trigonometric series (default: zero).
    #[arg(long)]
    pub potential: Option<PathBuf>,
    /// Density: TOML trigonometric series or raw grid file.
    #[arg(long)]
    pub density: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub p_start: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub p_end: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub p_count: Option<Vec<usize>>,
    /// Time horizon(s).
    #[arg(long = "T", value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub j_schedule: Option<Vec<usize>>,
    /// Grid size N per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "EFFHAM_WORKERS")]
    pub workers: Option<usize>,
    /// CSV output; the JSON sidecar goes next to it. Stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Main solver tolerance of the command.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Restarts per search level.
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CrosscheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub sampling: Option<SamplingScheme>,
    /// Independent samples per (j, T), seeded `seed, seed + 1, ...`.
    #[arg(long)]
    pub replicas: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ActionArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub x: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub y: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct AssignArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// One point per line, coordinates separated by commas or blanks.
    #[arg(long, required = true)]
    pub points: PathBuf,
}

/// Run file contents. All keys optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub potential: Option<PathBuf>,
    pub density: Option<PathBuf>,
    #[serde(rename = "T")]
    pub t: Option<Vec<f64>>,
    pub j_schedule: Option<Vec<usize>>,
    pub grid: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub restarts: Option<usize>,
    pub sampling: Option<SamplingScheme>,
    pub replicas: Option<usize>,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub p_start: Option<Vec<f64>>,
    pub p_end: Option<Vec<f64>>,
    pub p_count: Option<Vec<usize>>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Effham,
    Dirichlet,
    Baseline,
    Crosscheck,
    ActionEval,
    AssignEval,
}

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub command: CommandKind,
    pub potential: Option<PathBuf>,
    pub density: Option<PathBuf>,
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    pub p_count: Vec<usize>,
    pub t: Vec<f64>,
    pub j_schedule: Vec<usize>,
    pub grid: usize,
    pub tol: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub restarts: usize,
    pub sampling: SamplingScheme,
    pub replicas: usize,
}

fn default_grid(command: CommandKind) -> usize {
    match command {
        CommandKind::Baseline => 128,
        CommandKind::Crosscheck => 512,
        _ => 256,
    }
}

impl RunSpec {
    pub fn resolve(command: CommandKind, args: &CommonArgs, extra: (Option<SamplingScheme>, Option<usize>)) -> Result<Self> {
        let file = match &args.config {
            Some(path) => ConfigFile::read(path)?,
            None => ConfigFile::default(),
        };
        let sweep = file.sweep.clone().unwrap_or_default();
        let p_start = args.p_start.clone().or(sweep.p_start).unwrap_or_else(|| vec![0.0]);
        let p_end = args.p_end.clone().or(sweep.p_end).unwrap_or_else(|| p_start.clone());
        let p_count = args
            .p_count
            .clone()
            .or(sweep.p_count)
            .unwrap_or_else(|| vec![1; p_start.len()]);
        let workers = args
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        let spec = RunSpec {
            command,
            potential: args.potential.clone().or(file.potential),
            density: args.density.clone().or(file.density),
            p_start,
            p_end,
            p_count,
            t: args.t.clone().or(file.t).unwrap_or_else(|| vec![1.0]),
            j_schedule: args.j_schedule.clone().or(file.j_schedule).unwrap_or_else(|| vec![4, 8, 16, 32]),
            grid: args.grid.or(file.grid).unwrap_or_else(|| default_grid(command)),
            tol: args.tol.or(file.tol),
            seed: args.seed.or(file.seed).unwrap_or(0),
            out: args.out.clone().or(file.out),
            workers,
            restarts: args.restarts.or(file.restarts).unwrap_or(16),
            sampling: extra.0.or(file.sampling).unwrap_or_default(),
            replicas: extra.1.or(file.replicas).unwrap_or(1),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.p_start.len();
        if n == 0 || self.p_end.len() != n || self.p_count.len() != n {
            return Err(Error::invalid("--p-start, --p-end and --p-count need one entry per axis"));
        }
        if self.p_count.contains(&0) {
            return Err(Error::invalid("sweep counts must be at least 1"));
        }
        if self.p_start.iter().chain(&self.p_end).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sweep bound"));
        }
        if self.t.is_empty() || self.t.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid("time horizons must be positive"));
        }
        if self.j_schedule.is_empty() || self.j_schedule.contains(&0) {
            return Err(Error::invalid("j schedule entries must be at least 1"));
        }
        if self.workers == 0 || self.restarts == 0 || self.replicas == 0 {
            return Err(Error::invalid("workers, restarts and replicas must be at least 1"));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return Err(Error::invalid("tolerance must be positive"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.p_start.len()
    }

    /// All sweep momenta, last axis fastest.
    pub fn momenta(&self) -> Vec<Vec<f64>> {
        let axis = |d: usize| -> Vec<f64> {
            let c = self.p_count[d];
            if c == 1 {
                return vec![self.p_start[d]];
            }
            let (a, b) = (self.p_start[d], self.p_end[d]);
            (0..c).map(|i| a + (b - a) * i as f64 / (c - 1) as f64).collect()
        };
        let mut out = vec![vec![]];
        for d in 0..self.dim() {
            let values = axis(d);
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |&v| {
                        let mut q = prefix.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }

    /// Potential from file, or zero in the sweep dimension.
    pub fn load_potential(&self) -> Result<TrigPotential> {
        let xi = match &self.potential {
            Some(path) => TrigPotential::read(path)?,
            None => TrigPotential::zero(self.dim()),
        };
        if xi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: xi.dim(),
                got: self.dim(),
            });
        }
        Ok(xi)
    }

    /// Trigonometric density from a `.toml` file, if one was given.
    fn trig_density(&self) -> Result<Option<TrigPotential>> {
        match &self.density {
            Some(path) if is_toml(path) => Ok(Some(TrigPotential::read(path)?)),
            _ => Ok(None),
        }
    }

    /// Grid density: a TOML series sampled at `grid` nodes, a raw grid file,
    /// or uniform when absent.
    pub fn load_density(&self) -> Result<DensityField> {
        let rho = match &self.density {
            Some(path) if is_toml(path) => DensityField::from_trig(&TrigPotential::read(path)?, self.grid)?,
            Some(path) => DensityField::read_raw(path)?,
            None => DensityField::uniform(self.dim(), self.grid),
        };
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: rho.dim(),
                got: self.dim(),
            });
        }
        Ok(rho)
    }

    fn search_config(&self, t: f64) -> SearchConfig {
        let mut cfg = SearchConfig {
            t,
            restarts: self.restarts,
            seed: self.seed,
            ..SearchConfig::default()
        };
        if let Some(tol) = self.tol {
            cfg.tol_outer = tol;
        }
        cfg
    }

    fn action_config(&self) -> ActionConfig {
        let mut cfg = ActionConfig::default();
        if let Some(tol) = self.tol {
            cfg.tol = tol;
        }
        cfg
    }
}

fn is_toml(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "toml")
}

/// Result table of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Rows whose status is not `ok`.
    pub failed: usize,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Output of a run.
#[derive(Debug, Clone)]
pub struct Report {
    pub table: Table,
    pub sidecar: serde_json::Value,
}

impl Report {
    /// 0 when every row is ok, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.table.failed == 0 {
            0
        } else {
            2
        }
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn axis_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|d| format!("{prefix}_{d}")).collect()
}

fn header(parts: &[&[String]], names: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = parts.iter().flat_map(|p| p.iter().cloned()).collect();
    h.extend(names.iter().map(|s| s.to_string()));
    h
}

fn status_of(err: &Error) -> String {
    // one line, commas are quoted by the writer anyway
    format!("error: {}", err.to_string().replace('\n', " "))
}

/// Every sweep row computed in parallel, merged in sweep order.
fn sweep<R: Send>(momenta: &[Vec<f64>], f: impl Fn(&[f64]) -> R + Sync) -> Vec<R> {
    momenta.par_iter().map(|p| f(p)).collect()
}

pub fn cmd_effham(spec: &RunSpec) -> Result<Report> {
    let xi = spec.load_potential()?;
    let t = spec.t[0];
    let cfg = spec.search_config(t);
    let max_xi = xi.certified_max().value;
    let mut schedule = spec.j_schedule.clone();
    schedule.sort_unstable();
    schedule.dedup();
    let momenta = spec.momenta();
    let results = sweep(&momenta, |p| effective_hamiltonian(&xi, p, &schedule, &cfg));
    let n = spec.dim();
    let head = header(
        &[&axis_names("p", n)],
        &[
            "T",
            "j",
            "D",
            "H",
            "max_xi",
            "noise",
            "restart_spread",
            "refinement_gap",
            "converged_restarts",
            "restarts",
            "monotonicity_violation",
            "status",
        ],
    );
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut details = Vec::new();
    for (p, res) in momenta.iter().zip(results) {
        let mut row: Vec<String> = p.iter().copied().map(num).collect();
        let (est, status) = match res {
            Ok(est) => (Some(est), "ok".to_string()),
            Err(Error::SearchFailure { best }) => (Some(*best), "unconverged".to_string()),
            Err(e) => (None, status_of(&e)),
        };
        if status != "ok" {
            failed += 1;
        }
        match &est {
            Some(e) => {
                let d = &e.diagnostics;
                row.extend([
                    num(t),
                    e.j.to_string(),
                    num(e.d_value),
                    num(e.h_value),
                    num(max_xi),
                    num(d.noise),
                    num(d.restart_spread),
                    num(d.refinement_gap),
                    d.converged_restarts.to_string(),
                    d.restarts_used.to_string(),
                    num(d.monotonicity_violation),
                ]);
            }
            None => {
                row.extend([num(t), String::new(), String::new(), String::new(), num(max_xi)]);
                row.extend(std::iter::repeat_n(String::new(), 6));
            }
        }
        row.push(status.clone());
        details.push(json!({ "p": p, "status": status, "estimate": est }));
        rows.push(row);
    }
    Ok(Report {
        table: Table {
            header: head,
            rows,
            failed,
        },
        sidecar: json!({ "spec": spec, "rows": details }),
    })
}

pub fn cmd_dirichlet(spec: &RunSpec) -> Result<Report> {
    let rho = spec.load_density()?;
    let mut cfg = SolverConfig::default();
    if let Some(tol) = spec.tol {
        cfg.rel_tol = tol;
    }
    let momenta = spec.momenta();
    let results = sweep(&momenta, |p| solve_cell_problem(&rho, p, &cfg));
    let n = spec.dim();
    let head = header(
        &[&axis_names("p", n), &["F".to_string()], &axis_names("J", n)],
        &["iterations", "residual", "status"],
    );
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut details = Vec::new();
    for (p, res) in momenta.iter().zip(results) {
        let mut row: Vec<String> = p.iter().copied().map(num).collect();
        match res {
            Ok(sol) => {
                row.push(num(sol.f_value));
                row.extend(sol.rotation.iter().copied().map(num));
                row.extend([sol.iterations.to_string(), num(sol.residual), "ok".into()]);
                details.push(json!({ "p": p, "F": sol.f_value, "J": sol.rotation, "iterations": sol.iterations, "residual": sol.residual }));
            }
            Err(e) => {
                failed += 1;
                row.extend(std::iter::repeat_n(String::new(), n + 3));
                row.push(status_of(&e));
                details.push(json!({ "p": p, "error": e.to_string() }));
            }
        }
        rows.push(row);
    }
    Ok(Report {
        table: Table {
            header: head,
            rows,
            failed,
        },
        sidecar: json!({ "spec": spec, "grid": rho.size(), "rows": details }),
    })
}

pub fn cmd_baseline(spec: &RunSpec) -> Result<Report> {
    let xi = spec.load_potential()?;
    let cfg = MinMaxConfig::new(spec.grid);
    let momenta = spec.momenta();
    let results = sweep(&momenta, |p| {
        let mm = minmax_h_with(&xi, p, &cfg);
        let oracle = if xi.dim() == 1 { Some(oracle_1d(&xi, p[0])) } else { None };
        (mm, oracle)
    });
    let n = spec.dim();
    let head = header(
        &[&axis_names("p", n)],
        &["H_upper", "H_smoothed", "gap_bound", "iterations", "oracle_E", "plateau", "P_c", "status"],
    );
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut details = Vec::new();
    for (p, (mm, oracle)) in momenta.iter().zip(results) {
        let mut row: Vec<String> = p.iter().copied().map(num).collect();
        let mut status = "ok".to_string();
        match &mm {
            Ok(r) => {
                row.extend([num(r.h_upper), num(r.h_smoothed), num(r.gap_bound), r.iterations.to_string()]);
                if !r.converged {
                    status = "unconverged".into();
                }
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 4));
                status = status_of(e);
            }
        }
        match &oracle {
            Some(Ok(o)) => row.extend([num(o.e), o.plateau.to_string(), num(o.p_c)]),
            Some(Err(e)) => {
                row.extend(std::iter::repeat_n(String::new(), 3));
                if status == "ok" {
                    status = status_of(e);
                }
            }
            None => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
        if status != "ok" {
            failed += 1;
        }
        row.push(status.clone());
        details.push(json!({
            "p": p,
            "status": status,
            "minmax": mm.as_ref().ok(),
            "oracle": oracle.as_ref().and_then(|o| o.as_ref().ok()),
        }));
        rows.push(row);
    }
    Ok(Report {
        table: Table {
            header: head,
            rows,
            failed,
        },
        sidecar: json!({ "spec": spec, "rows": details }),
    })
}

/// `(j, T)` pairs: zipped when both lists have the same length, otherwise
/// a single `T` applies to every `j`.
fn crosscheck_levels(spec: &RunSpec) -> Result<Vec<(usize, f64)>> {
    if spec.t.len() == spec.j_schedule.len() {
        Ok(spec.j_schedule.iter().copied().zip(spec.t.iter().copied()).collect())
    } else if spec.t.len() == 1 {
        Ok(spec.j_schedule.iter().map(|&j| (j, spec.t[0])).collect())
    } else {
        Err(Error::invalid(format!(
            "crosscheck needs one T or one T per j ({} T values for {} levels)",
            spec.t.len(),
            spec.j_schedule.len()
        )))
    }
}

pub fn cmd_crosscheck(spec: &RunSpec) -> Result<Report> {
    let xi = spec.load_potential()?;
    let rho_series = match spec.trig_density()? {
        Some(r) => r,
        None if spec.density.is_none() => {
            TrigPotential::new(spec.dim(), vec![crate::potential::Mode::new(vec![0; spec.dim()], 1.0, 0.0)])?
        }
        None => return Err(Error::invalid("crosscheck samples need a TOML trigonometric density")),
    };
    if rho_series.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho_series.dim(),
            got: spec.dim(),
        });
    }
    let rho = DensityField::from_trig(&rho_series, spec.grid)?;
    let xi_mean = potential_mean(&xi, &rho_series, spec.grid)?;
    let levels = crosscheck_levels(spec)?;
    let acfg = spec.action_config();
    let momenta = spec.momenta();
    let n = spec.dim();

    let references: Vec<Result<f64>> = sweep(&momenta, |p| {
        Ok(xi_mean + solve_cell_problem(&rho, p, &SolverConfig::default())?.f_value)
    });
    let mut jobs = Vec::new();
    for (pi, _) in momenta.iter().enumerate() {
        for &(j, t) in &levels {
            for r in 0..spec.replicas {
                jobs.push((pi, j, t, spec.seed.wrapping_add(r as u64)));
            }
        }
    }
    let results: Vec<Result<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(pi, j, t, seed)| {
            let points = sample_density(&rho_series, j, seed, spec.sampling)?;
            let p = &momenta[pi];
            let plan = empirical_d(&points, &xi, t, p, &acfg)?;
            let h = 0.5 * p.iter().map(|c| c * c).sum::<f64>() - plan.value;
            // F vanishes on atomic measures, so the fixed-j limit T -> 0 is the mean potential
            let atomic = points.iter().map(|x| xi.value_at(x.coords())).sum::<f64>() / j as f64;
            Ok((h, atomic))
        })
        .collect();

    let head = header(
        &[&axis_names("p", n)],
        &["j", "T", "seed", "empirical_H", "reference", "error", "atomic_reference", "atomic_error", "status"],
    );
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut details = Vec::new();
    for (&(pi, j, t, seed), res) in jobs.iter().zip(results) {
        let p = &momenta[pi];
        let mut row: Vec<String> = p.iter().copied().map(num).collect();
        row.extend([j.to_string(), num(t), seed.to_string()]);
        let outcome = match (&references[pi], res) {
            (Ok(reference), Ok((h, atomic))) => Ok((h, *reference, atomic)),
            (Err(e), _) => Err(status_of(e)),
            (_, Err(e)) => Err(status_of(&e)),
        };
        match outcome {
            Ok((h, reference, atomic)) => {
                row.extend([
                    num(h),
                    num(reference),
                    num((h - reference).abs()),
                    num(atomic),
                    num((h - atomic).abs()),
                    "ok".into(),
                ]);
                details.push(json!({ "p": p, "j": j, "T": t, "seed": seed, "empirical_H": h, "reference": reference, "atomic_reference": atomic }));
            }
            Err(status) => {
                failed += 1;
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(status.clone());
                details.push(json!({ "p": p, "j": j, "T": t, "seed": seed, "error": status }));
            }
        }
        rows.push(row);
    }
    Ok(Report {
        table: Table {
            header: head,
            rows,
            failed,
        },
        sidecar: json!({ "spec": spec, "potential_mean": xi_mean, "rows": details }),
    })
}

pub fn cmd_action_eval(spec: &RunSpec, x: &[f64], y: &[f64], p: Option<&[f64]>) -> Result<Report> {
    let xi = spec.load_potential()?;
    let p = p.map(|v| v.to_vec()).unwrap_or_else(|| spec.p_start.clone());
    let t = spec.t[0];
    let q = ActionQuery::new(canonicalize(y)?, canonicalize(x)?, t, p.clone())?;
    let n = q.dim();
    let (sol, gap, status) = match action_refined(&q, &xi, &spec.action_config()) {
        Ok((sol, gap)) => (sol, gap, "ok".to_string()),
        Err(Error::OptimizationFailure { best, .. }) => (*best, f64::NAN, "unconverged".to_string()),
        Err(e) => return Err(e),
    };
    let head = header(
        &[&axis_names("x", n), &axis_names("y", n), &["T".to_string()], &axis_names("p", n), &axis_names("lift", n)],
        &["action", "mechanical_action", "segments", "refinement_gap", "el_residual", "status"],
    );
    let mut row: Vec<String> = q.x.coords().iter().chain(q.y.coords()).copied().map(num).collect();
    row.push(num(t));
    row.extend(p.iter().copied().map(num));
    row.extend(sol.lift.iter().map(|z| z.to_string()));
    row.extend([
        num(sol.action_value),
        num(sol.mechanical_action),
        sol.segments().to_string(),
        num(gap),
        num(sol.el_residual),
        status.clone(),
    ]);
    let failed = usize::from(status != "ok");
    Ok(Report {
        table: Table {
            header: head,
            rows: vec![row],
            failed,
        },
        sidecar: json!({ "spec": spec, "query": q, "solution": sol }),
    })
}

/// Whitespace- or comma-separated coordinates, one point per line; `#`
/// starts a comment.
pub fn parse_points(text: &str) -> Result<Vec<TorusPoint>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let coords = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: '{s}': {e}", lineno + 1))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(canonicalize(&coords)?);
    }
    if out.is_empty() {
        return Err(Error::Parse("no points found".into()));
    }
    let n = out[0].dim();
    if let Some(bad) = out.iter().find(|p| p.dim() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.dim(),
        });
    }
    Ok(out)
}

pub fn cmd_assign_eval(spec: &RunSpec, points: &Path) -> Result<Report> {
    let xi = spec.load_potential()?;
    let pts = parse_points(&std::fs::read_to_string(points)?)?;
    if pts[0].dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: pts[0].dim(),
            got: spec.dim(),
        });
    }
    let t = spec.t[0];
    let acfg = spec.action_config();
    let momenta = spec.momenta();
    let results = sweep(&momenta, |p| empirical_d(&pts, &xi, t, p, &acfg));
    let n = spec.dim();
    let head = header(&[&axis_names("p", n)], &["T", "j", "D", "H", "status"]);
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut details = Vec::new();
    for (p, res) in momenta.iter().zip(results) {
        let mut row: Vec<String> = p.iter().copied().map(num).collect();
        row.extend([num(t), pts.len().to_string()]);
        match res {
            Ok(plan) => {
                let h = 0.5 * p.iter().map(|c| c * c).sum::<f64>() - plan.value;
                row.extend([num(plan.value), num(h), "ok".into()]);
                details.push(json!({ "p": p, "D": plan.value, "H": h, "permutation": plan.perm }));
            }
            Err(e) => {
                failed += 1;
                row.extend([String::new(), String::new(), status_of(&e)]);
                details.push(json!({ "p": p, "error": e.to_string() }));
            }
        }
        rows.push(row);
    }
    Ok(Report {
        table: Table {
            header: head,
            rows,
            failed,
        },
        sidecar: json!({ "spec": spec, "points": pts, "rows": details }),
    })
}

/// Resolves the run spec, executes the command on a pool of
/// `spec.workers` threads, and writes the outputs.
pub fn run(cli: &Cli) -> Result<Report> {
    let (spec, job): (RunSpec, Box<dyn Fn(&RunSpec) -> Result<Report> + Sync>) = match &cli.command {
        Command::Effham(a) => (RunSpec::resolve(CommandKind::Effham, a, (None, None))?, Box::new(cmd_effham)),
        Command::Dirichlet(a) => (RunSpec::resolve(CommandKind::Dirichlet, a, (None, None))?, Box::new(cmd_dirichlet)),
        Command::Baseline(a) => (RunSpec::resolve(CommandKind::Baseline, a, (None, None))?, Box::new(cmd_baseline)),
        Command::Crosscheck(a) => (
            RunSpec::resolve(CommandKind::Crosscheck, &a.common, (a.sampling, a.replicas))?,
            Box::new(cmd_crosscheck),
        ),
        Command::ActionEval(a) => {
            let spec = RunSpec::resolve(CommandKind::ActionEval, &a.common, (None, None))?;
            let (x, y, p) = (a.x.clone(), a.y.clone(), a.p.clone());
            (spec, Box::new(move |s: &RunSpec| cmd_action_eval(s, &x, &y, p.as_deref())))
        }
        Command::AssignEval(a) => {
            let spec = RunSpec::resolve(CommandKind::AssignEval, &a.common, (None, None))?;
            let points = a.points.clone();
            (spec, Box::new(move |s: &RunSpec| cmd_assign_eval(s, &points)))
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let report = pool.install(|| job(&spec))?;
    write_outputs(&report, spec.out.as_deref())?;
    Ok(report)
}

/// CSV to `out` (or stdout) and the JSON sidecar to `out` with a `.json`
/// extension.
pub fn write_outputs(report: &Report, out: Option<&Path>) -> Result<()> {
    let csv = report.table.to_csv()?;
    match out {
        Some(path) => {
            std::fs::write(path, csv)?;
            let side = path.with_extension("json");
            std::fs::write(side, serde_json::to_string_pretty(&report.sidecar)?)?;
        }
        None => {
            std::io::stdout().write_all(csv.as_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("effham").chain(args.iter().copied())).unwrap()
    }

    fn common(cli: &Cli) -> &CommonArgs {
        match &cli.command {
            Command::Effham(a) | Command::Dirichlet(a) | Command::Baseline(a) => a,
            Command::Crosscheck(a) => &a.common,
            Command::ActionEval(a) => &a.common,
            Command::AssignEval(a) => &a.common,
        }
    }

    #[test]
    fn sweep_is_a_cartesian_product() {
        let cli = parse(&["dirichlet", "--p-start", "0,-1", "--p-end", "1,1", "--p-count", "3,2", "--workers", "1"]);
        let spec = RunSpec::resolve(CommandKind::Dirichlet, common(&cli), (None, None)).unwrap();
        let m = spec.momenta();
        assert_eq!(m.len(), 6);
        assert_eq!(m[0], vec![0.0, -1.0]);
        assert_eq!(m[1], vec![0.0, 1.0]);
        assert_eq!(m[5], vec![1.0, 1.0]);
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "T = [0.5]\nseed = 9\ngrid = 64\n[sweep]\np_start = [0.0]\np_end = [2.0]\np_count = [5]\n",
        )
        .unwrap();
        let cli = parse(&["baseline", "--config", path.to_str().unwrap(), "--seed", "3", "--workers", "2"]);
        let spec = RunSpec::resolve(CommandKind::Baseline, common(&cli), (None, None)).unwrap();
        assert_eq!(spec.seed, 3);
        assert_eq!(spec.grid, 64);
        assert_eq!(spec.t, vec![0.5]);
        assert_eq!(spec.momenta().len(), 5);
        std::fs::write(&path, "bogus = 1\n").unwrap();
        assert!(RunSpec::resolve(CommandKind::Baseline, common(&cli), (None, None)).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for args in [
            &["effham", "--p-start", "0,0", "--p-count", "2"][..],
            &["effham", "--p-count", "0"][..],
            &["effham", "--T", "0"][..],
            &["effham", "--workers", "0"][..],
        ] {
            let cli = parse(args);
            assert!(RunSpec::resolve(CommandKind::Effham, common(&cli), (None, None)).is_err(), "{args:?}");
        }
    }

    #[test]
    fn points_file_parsing() {
        let pts = parse_points("# atoms\n0.1, 0.2\n0.7 -0.4\n\n").unwrap();
        assert_eq!(pts.len(), 2);
        assert!((pts[1].coords()[0] - 0.7).abs() < 1e-15 && (pts[1].coords()[1] - 0.6).abs() < 1e-15);
        assert!(parse_points("0.1\n0.2 0.3\n").is_err());
        assert!(parse_points("abc\n").is_err());
        assert!(parse_points("# nothing\n").is_err());
    }

    #[test]
    fn dirichlet_uniform_rows() {
        let cli = parse(&["dirichlet", "--p-start", "0", "--p-end", "1", "--p-count", "3", "--grid", "32", "--workers", "1"]);
        let spec = RunSpec::resolve(CommandKind::Dirichlet, common(&cli), (None, None)).unwrap();
        let report = cmd_dirichlet(&spec).unwrap();
        assert_eq!(report.table.header, ["p_1", "F", "J_1", "iterations", "residual", "status"]);
        for row in &report.table.rows {
            let p: f64 = row[0].parse().unwrap();
            let f: f64 = row[1].parse().unwrap();
            assert!((f - 0.5 * p * p).abs() < 1e-12);
            assert_eq!(row[5], "ok");
        }
        assert_eq!(report.exit_code(), 0);
    }
}
