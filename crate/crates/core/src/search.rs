//! Outer minimization of the normalized transport value over atom
//! configurations, and the effective Hamiltonian `|P|^2/2 - lim_j D(j)`.
//!
//! Each restart alternates an exact assignment with L-BFGS descent of the
//! atoms under a fixed permutation. The best restart then goes through a
//! single-atom annealing pass, and the best configuration seen there is
//! polished by another alternation. Every reported `D` is the
//! assignment value of an actual configuration, so it bounds the true
//! minimum from above.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{action_general_with, ActionConfig, ActionQuery, PathSolution};
use crate::assignment::{solve_assignment, CostMatrix, TransportPlan};
use crate::error::{check_dim, Error, Result};
use crate::optim::{lbfgs, LbfgsConfig};
use crate::potential::TrigPotential;
use crate::torus::{canonicalize, min_displacement, TorusPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    /// Metropolis temperature for the raw (unnormalized) assignment cost.
    pub initial_temperature: f64,
    pub decay: f64,
    pub steps: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            initial_temperature: 0.1,
            decay: 0.9,
            steps: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub j: usize,
    pub t: f64,
    pub restarts: usize,
    pub anneal: AnnealSchedule,
    /// Relative improvement below which the alternation stops.
    pub tol_outer: f64,
    pub max_alternations: usize,
    /// L-BFGS iterations per descent phase.
    pub descent_iters: usize,
    pub action: ActionConfig,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            j: 4,
            t: 1.0,
            restarts: 16,
            anneal: AnnealSchedule::default(),
            tol_outer: 1e-9,
            max_alternations: 30,
            descent_iters: 100,
            action: ActionConfig::default(),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 {
            return Err(Error::invalid("need at least one atom"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("need at least one restart"));
        }
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(Error::invalid(format!("time horizon must be positive, got {}", self.t)));
        }
        let a = &self.anneal;
        if !(a.decay > 0.0 && a.decay < 1.0) {
            return Err(Error::invalid(format!("anneal decay must lie in (0, 1), got {}", a.decay)));
        }
        if !(a.initial_temperature >= 0.0) {
            return Err(Error::invalid("anneal temperature must be nonnegative"));
        }
        if !(self.tol_outer >= 0.0) || self.max_alternations == 0 {
            return Err(Error::invalid("need a nonnegative tolerance and at least one alternation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub j: usize,
    pub d_value: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub restarts_used: usize,
    pub converged_restarts: usize,
    /// Final `D` of each restart, in restart order.
    pub restart_values: Vec<f64>,
    pub restart_converged: Vec<bool>,
    pub alternations: Vec<usize>,
    /// Accepted Metropolis moves on the incumbent.
    pub anneal_accepted: usize,
    /// Decrease of `D` obtained by annealing the incumbent.
    pub anneal_gain: f64,
    pub best_restart: usize,
    /// `|D(M) - D(2M)|` on the best configuration.
    pub refinement_gap: f64,
    /// Distance from the best restart to the next best converged one.
    pub restart_spread: f64,
    /// `max(restart_spread, refinement_gap)`.
    pub noise: f64,
    /// Per-level values along a `j` schedule (empty for a single level).
    pub levels: Vec<LevelRecord>,
    /// Largest increase of `D` between consecutive levels beyond the noise.
    pub monotonicity_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffHamEstimate {
    pub p: Vec<f64>,
    pub t: f64,
    pub j: usize,
    pub d_value: f64,
    /// `|P|^2/2 - d_value`.
    pub h_value: f64,
    pub points: Vec<TorusPoint>,
    pub plan: TransportPlan,
    pub converged: bool,
    pub diagnostics: SearchDiagnostics,
}

fn half_norm2(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|c| c * c).sum::<f64>()
}

/// Atoms as one flat coordinate vector of length `j * n`.
#[derive(Debug, Clone)]
struct Config {
    n: usize,
    coords: Vec<f64>,
}

impl Config {
    fn j(&self) -> usize {
        self.coords.len() / self.n
    }

    fn atom(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n..(i + 1) * self.n]
    }

    fn wrap(mut self) -> Self {
        for c in &mut self.coords {
            *c -= c.floor();
            if *c >= 1.0 {
                *c = 0.0;
            }
        }
        self
    }

    fn points(&self) -> Vec<TorusPoint> {
        (0..self.j())
            .map(|i| canonicalize(self.atom(i)).expect("coordinates are finite"))
            .collect()
    }
}

struct Evaluator<'a> {
    xi: &'a TrigPotential,
    t: f64,
    p: &'a [f64],
    cfg: ActionConfig,
}

impl Evaluator<'_> {
    /// Best-effort action: a path that missed the tolerance is still returned.
    fn action(&self, y: &[f64], x: &[f64]) -> Result<PathSolution> {
        let q = ActionQuery::new(canonicalize(y)?, canonicalize(x)?, self.t, self.p.to_vec())?;
        match action_general_with(&q, self.xi, &self.cfg) {
            Ok(s) => Ok(s),
            Err(Error::OptimizationFailure { best, .. }) => Ok(*best),
            Err(e) => Err(e),
        }
    }

    fn value(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        Ok(self.action(y, x)?.action_value)
    }

    fn matrix(&self, c: &Config) -> Result<(CostMatrix, Vec<bool>)> {
        let j = c.j();
        let sols: Vec<(f64, bool)> = (0..j * j)
            .into_par_iter()
            .map(|idx| self.action(c.atom(idx / j), c.atom(idx % j)).map(|s| (s.action_value, s.converged)))
            .collect::<Result<_>>()?;
        let conv = sols.iter().map(|s| s.1).collect();
        Ok((CostMatrix::new(j, sols.into_iter().map(|s| s.0).collect())?, conv))
    }

    /// `(1/j) sum_i A(x_i, x_perm(i))` and its gradient in all coordinates.
    fn objective(&self, coords: &[f64], perm: &[usize], grad: &mut [f64]) -> Result<f64> {
        let n = self.p.len();
        let j = perm.len();
        let terms: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..j)
            .into_par_iter()
            .map(|i| {
                let (y, x) = (&coords[i * n..(i + 1) * n], &coords[perm[i] * n..(perm[i] + 1) * n]);
                let sol = self.action(y, x)?;
                if sol.converged {
                    Ok((sol.action_value, sol.grad_source(self.p), sol.grad_target(self.p)))
                } else {
                    let (gs, gt) = self.finite_difference(y, x)?;
                    Ok((sol.action_value, gs, gt))
                }
            })
            .collect::<Result<_>>()?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for (i, (v, gs, gt)) in terms.iter().enumerate() {
            value += v;
            let l = perm[i];
            for r in 0..n {
                grad[i * n + r] += gs[r] / j as f64;
                grad[l * n + r] += gt[r] / j as f64;
            }
        }
        Ok(value / j as f64)
    }

    fn finite_difference(&self, y: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        const STEP: f64 = 1e-5;
        let n = y.len();
        let mut gs = vec![0.0; n];
        let mut gt = vec![0.0; n];
        for r in 0..n {
            let (mut a, mut b) = (y.to_vec(), y.to_vec());
            a[r] += STEP;
            b[r] -= STEP;
            gs[r] = (self.value(&a, x)? - self.value(&b, x)?) / (2.0 * STEP);
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[r] += STEP;
            b[r] -= STEP;
            gt[r] = (self.value(y, &a)? - self.value(y, &b)?) / (2.0 * STEP);
        }
        Ok((gs, gt))
    }
}

#[derive(Debug, Clone)]
struct Outcome {
    config: Config,
    plan: TransportPlan,
    converged: bool,
    alternations: usize,
}

struct Searcher<'a> {
    eval: Evaluator<'a>,
    cfg: SearchConfig,
}

impl Searcher<'_> {
    /// Exact assignment / point descent until the relative improvement of
    /// one round falls below `tol_outer`.
    fn alternate(&self, start: Config) -> Result<Outcome> {
        let mut config = start.wrap();
        let (cost, mut conv) = self.eval.matrix(&config)?;
        let mut plan = solve_assignment(&cost);
        let lcfg = LbfgsConfig {
            max_iter: self.cfg.descent_iters,
            gtol: 1e-9,
            ftol: 1e-12,
            max_step: 0.1,
            ..LbfgsConfig::default()
        };
        let mut converged = false;
        let mut rounds = 0;
        while rounds < self.cfg.max_alternations {
            rounds += 1;
            let perm = plan.perm.clone();
            let mut failure = None;
            let res = lbfgs(
                &config.coords,
                |x, g| match self.eval.objective(x, &perm, g) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                },
                &lcfg,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            let moved = Config {
                n: config.n,
                coords: res.x,
            }
            .wrap();
            let (cost, new_conv) = self.eval.matrix(&moved)?;
            let new_plan = solve_assignment(&cost);
            let improvement = plan.value - new_plan.value;
            if improvement >= 0.0 {
                config = moved;
                plan = new_plan;
                conv = new_conv;
            }
            if improvement <= self.cfg.tol_outer * plan.value.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        let j = config.j();
        let planned_ok = plan.perm.iter().enumerate().all(|(i, &l)| conv[i * j + l]);
        Ok(Outcome {
            config,
            plan,
            converged: converged && planned_ok,
            alternations: rounds,
        })
    }

    /// Single-atom Metropolis moves with exact re-assignment after each.
    fn anneal(&self, from: &Outcome, rng: &mut ChaCha8Rng) -> Result<(Config, usize)> {
        let sched = self.cfg.anneal;
        let mut config = from.config.clone();
        let j = config.j();
        let n = config.n;
        if sched.steps == 0 || j == 0 {
            return Ok((config, 0));
        }
        let (mut cost, _) = self.eval.matrix(&config)?;
        let mut current = cost.raw_cost(&solve_assignment(&cost).perm);
        let mut best = (current, config.clone());
        let mut tau = sched.initial_temperature;
        let mut accepted = 0;
        for _ in 0..sched.steps {
            let i = rng.random_range(0..j);
            let width = 0.25 * (tau / sched.initial_temperature.max(f64::MIN_POSITIVE)).sqrt().max(0.02);
            let mut atom = config.atom(i).to_vec();
            for c in atom.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *c += width * z;
                *c -= c.floor();
                if *c >= 1.0 {
                    *c = 0.0;
                }
            }
            let mut trial = config.clone();
            trial.coords[i * n..(i + 1) * n].copy_from_slice(&atom);
            // row i and column i change; (i, i) once
            let updates: Vec<(usize, usize, f64)> = (0..2 * j - 1)
                .into_par_iter()
                .map(|k| {
                    let (a, b) = if k < j { (i, k) } else { (k - j + usize::from(k - j >= i), i) };
                    self.eval.value(trial.atom(a), trial.atom(b)).map(|v| (a, b, v))
                })
                .collect::<Result<_>>()?;
            let mut trial_cost = cost.clone();
            for (a, b, v) in updates {
                trial_cost.set(a, b, v);
            }
            let value = trial_cost.raw_cost(&solve_assignment(&trial_cost).perm);
            let delta = value - current;
            let u: f64 = rng.random();
            if delta <= 0.0 || (tau > 0.0 && u < (-delta / tau).exp()) {
                config = trial;
                cost = trial_cost;
                current = value;
                accepted += 1;
                if current < best.0 {
                    best = (current, config.clone());
                }
            }
            tau *= sched.decay;
        }
        Ok((best.1, accepted))
    }
}

const ANNEAL_STREAM: usize = usize::MAX >> 33;

fn restart_rng(seed: u64, j: usize, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((j as u64) << 32) | restart as u64);
    rng
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rank-one lattice `frac(i g / j)` with `g_0 = 1`; exactly `i/j` in 1-D.
fn lattice(j: usize, n: usize) -> Config {
    let mut gens = vec![1usize];
    for c in 1..n {
        let golden = 0.618_033_988_749_895 * c as f64;
        let mut g = ((golden - golden.floor()) * j as f64).round().max(1.0) as usize;
        while j > 1 && gcd(g, j) != 1 {
            g += 1;
        }
        gens.push(g);
    }
    let mut coords = Vec::with_capacity(j * n);
    for i in 0..j {
        for g in &gens {
            coords.push(((i * g) % j) as f64 / j as f64);
        }
    }
    Config { n, coords }
}

/// `barD` with the cheap kinetic surrogate on raw coordinates; used to rank
/// random initial configurations.
fn surrogate_value(c: &Config, xi: &TrigPotential, t: f64, p: &[f64]) -> f64 {
    bar_d(&c.points(), xi, t, p).map(|plan| plan.value).unwrap_or(f64::INFINITY)
}

fn initial_configs(
    xi: &TrigPotential,
    p: &[f64],
    cfg: &SearchConfig,
    warm: Option<&[TorusPoint]>,
) -> Vec<Config> {
    let n = xi.dim();
    let j = cfg.j;
    let mut out = Vec::with_capacity(cfg.restarts);
    let mut lattice_used = false;
    match warm {
        Some(w) => out.push(split_atoms(w, j, cfg.seed)),
        None => {
            out.push(lattice(j, n));
            lattice_used = true;
        }
    }
    // all atoms at the maximizer: D = -max Xi + O(|P|^2)
    let argmax = xi.certified_max().argmax.coords().to_vec();
    out.push(Config {
        n,
        coords: argmax.iter().copied().cycle().take(j * n).collect(),
    });
    if !lattice_used {
        out.push(lattice(j, n));
    }
    let mut r = out.len();
    while out.len() < cfg.restarts {
        let mut rng = restart_rng(cfg.seed ^ 0x5eed, j, r);
        let best = (0..8)
            .map(|_| Config {
                n,
                coords: (0..j * n).map(|_| rng.random::<f64>()).collect(),
            })
            .map(|c| (surrogate_value(&c, xi, cfg.t, p), c))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("nonempty")
            .1;
        out.push(best);
        r += 1;
    }
    out.truncate(cfg.restarts);
    out
}

/// Warm start for a larger `j`: atom `i` copies `old[i mod old_j]` with
/// Gaussian jitter of width `0.05 / j`.
fn split_atoms(old: &[TorusPoint], j: usize, seed: u64) -> Config {
    let n = old[0].dim();
    let mut rng = restart_rng(seed ^ 0x5b11, j, usize::MAX >> 32);
    let width = 0.05 / j as f64;
    let mut coords = Vec::with_capacity(j * n);
    for i in 0..j {
        for &c in old[i % old.len()].coords() {
            let z: f64 = StandardNormal.sample(&mut rng);
            coords.push(c + width * z);
        }
    }
    Config { n, coords }.wrap()
}

/// Minimizes `D^T_P` over configurations of `cfg.j` atoms.
pub fn minimize_configuration(xi: &TrigPotential, p: &[f64], cfg: &SearchConfig) -> Result<EffHamEstimate> {
    minimize_configuration_from(xi, p, cfg, None)
}

/// As [`minimize_configuration`], with the first restart seeded from
/// `warm` (resampled to `cfg.j` atoms).
pub fn minimize_configuration_from(
    xi: &TrigPotential,
    p: &[f64],
    cfg: &SearchConfig,
    warm: Option<&[TorusPoint]>,
) -> Result<EffHamEstimate> {
    cfg.validate()?;
    check_dim(xi.dim(), p.len())?;
    if let Some(w) = warm {
        if w.is_empty() {
            return Err(Error::invalid("warm start needs at least one atom"));
        }
        check_dim(xi.dim(), w[0].dim())?;
    }
    let searcher = Searcher {
        eval: Evaluator {
            xi,
            t: cfg.t,
            p,
            cfg: cfg.action,
        },
        cfg: *cfg,
    };
    let starts = initial_configs(xi, p, cfg, warm);
    let outcomes: Vec<Outcome> = starts
        .into_par_iter()
        .map(|start| searcher.alternate(start))
        .collect::<Result<_>>()?;

    let mut diag = SearchDiagnostics {
        restarts_used: outcomes.len(),
        converged_restarts: outcomes.iter().filter(|o| o.converged).count(),
        restart_values: outcomes.iter().map(|o| o.plan.value).collect(),
        restart_converged: outcomes.iter().map(|o| o.converged).collect(),
        alternations: outcomes.iter().map(|o| o.alternations).collect(),
        ..SearchDiagnostics::default()
    };
    // lowest value, ties to the lowest restart index
    let pick = |only_converged: bool| {
        outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.converged || !only_converged)
            .min_by(|a, b| a.1.plan.value.total_cmp(&b.1.plan.value).then(a.0.cmp(&b.0)))
            .map(|(r, _)| r)
    };
    let best_idx = pick(true);
    let any_converged = best_idx.is_some();
    let best_idx = best_idx.or_else(|| pick(false)).expect("at least one restart");
    diag.best_restart = best_idx;

    // annealed perturbation of the incumbent, then a polishing alternation
    let mut rng = restart_rng(cfg.seed, cfg.j, ANNEAL_STREAM);
    let (annealed, accepted) = searcher.anneal(&outcomes[best_idx], &mut rng)?;
    diag.anneal_accepted = accepted;
    let polished = if accepted > 0 { Some(searcher.alternate(annealed)?) } else { None };
    let best = match &polished {
        Some(o) if o.converged && o.plan.value < outcomes[best_idx].plan.value => {
            diag.anneal_gain = outcomes[best_idx].plan.value - o.plan.value;
            o
        }
        _ => &outcomes[best_idx],
    };

    let mut converged_values: Vec<f64> = outcomes
        .iter()
        .enumerate()
        .filter(|(r, o)| o.converged && *r != best_idx)
        .map(|(_, o)| o.plan.value)
        .collect();
    converged_values.sort_by(f64::total_cmp);
    diag.restart_spread = converged_values.first().map_or(0.0, |v| (v - best.plan.value).max(0.0));

    let fine = Evaluator {
        cfg: ActionConfig {
            segments: cfg.action.segments * 2,
            ..cfg.action
        },
        ..searcher.eval
    };
    let fine_value = solve_assignment(&fine.matrix(&best.config)?.0).value;
    diag.refinement_gap = (fine_value - best.plan.value).abs();
    diag.noise = diag.restart_spread.max(diag.refinement_gap);

    let estimate = EffHamEstimate {
        p: p.to_vec(),
        t: cfg.t,
        j: cfg.j,
        d_value: best.plan.value,
        h_value: half_norm2(p) - best.plan.value,
        points: best.config.points(),
        plan: best.plan.clone(),
        converged: any_converged,
        diagnostics: diag,
    };
    if any_converged {
        Ok(estimate)
    } else {
        Err(Error::SearchFailure {
            best: Box::new(estimate),
        })
    }
}

/// Runs [`minimize_configuration`] along an increasing `j` schedule,
/// warm-starting each level from the previous one, and returns the last
/// level with the per-level record in its diagnostics.
pub fn effective_hamiltonian(
    xi: &TrigPotential,
    p: &[f64],
    j_schedule: &[usize],
    cfg: &SearchConfig,
) -> Result<EffHamEstimate> {
    if j_schedule.is_empty() {
        return Err(Error::invalid("j schedule must be nonempty"));
    }
    if j_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("j schedule must be increasing, got {j_schedule:?}")));
    }
    let mut levels: Vec<LevelRecord> = Vec::with_capacity(j_schedule.len());
    let mut warm: Option<Vec<TorusPoint>> = None;
    let mut last = None;
    for &j in j_schedule {
        let level_cfg = SearchConfig { j, ..*cfg };
        let est = minimize_configuration_from(xi, p, &level_cfg, warm.as_deref())?;
        levels.push(LevelRecord {
            j,
            d_value: est.d_value,
            noise: est.diagnostics.noise,
        });
        warm = Some(est.points.clone());
        last = Some(est);
    }
    let mut est = last.expect("schedule is nonempty");
    est.diagnostics.monotonicity_violation = levels
        .windows(2)
        .map(|w| (w[1].d_value - w[0].d_value - w[0].noise.max(w[1].noise)).max(0.0))
        .fold(0.0, f64::max);
    est.diagnostics.levels = levels;
    Ok(est)
}

/// Quadratic surrogate of `D`: straight-line kinetic cost and the potential
/// at the source atom, `(1/j) sum_i ||x_s(i) - x_i - T P||^2 / (2 T^2) - Xi(x_i)`,
/// minimized exactly over permutations.
pub fn bar_d(points: &[TorusPoint], xi: &TrigPotential, t: f64, p: &[f64]) -> Result<TransportPlan> {
    if points.is_empty() {
        return Err(Error::invalid("need at least one atom"));
    }
    if !(t > 0.0) {
        return Err(Error::invalid(format!("time horizon must be positive, got {t}")));
    }
    check_dim(xi.dim(), p.len())?;
    let shift: Vec<f64> = p.iter().map(|c| c * t).collect();
    let j = points.len();
    let mut entries = Vec::with_capacity(j * j);
    for y in points {
        let pot = xi.eval(y)?;
        for x in points {
            let d = min_displacement(x, y, &shift)?;
            entries.push(d.norm_squared() / (2.0 * t * t) - pot);
        }
    }
    Ok(solve_assignment(&CostMatrix::new(j, entries)?))
}
