//! Minimal normalized action between two torus points.
//!
//! `A(y, x, T) = inf (1/T) int_0^T |x' - P|^2 / 2 - Xi(x(s)) ds` over paths from
//! `y` to `x` in time `T`. The `P`-dependence is split off analytically: for a
//! path ending at the lift `x + z`, `int P.x' = P.(x + z - y)` is fixed, so
//!
//! `A = (S0 - P.d) / T + |P|^2 / 2`,  `d = x + z - y`,
//!
//! with `S0` the mechanical action `inf int |x'|^2/2 - Xi`. `S0` is minimized
//! over piecewise-linear paths with `M` segments; the potential term of each
//! segment is integrated exactly, so the discrete value is the true action of
//! the discrete path and refining `M` can only lower it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::potential::TrigPotential;
use crate::torus::{min_displacement, nearest_lift, TorusPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionQuery {
    pub y: TorusPoint,
    pub x: TorusPoint,
    pub t: f64,
    pub p: Vec<f64>,
}

impl ActionQuery {
    pub fn new(y: TorusPoint, x: TorusPoint, t: f64, p: Vec<f64>) -> Result<Self> {
        check_dim(y.dim(), x.dim())?;
        check_dim(y.dim(), p.len())?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!("time horizon must be positive, got {t}")));
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite momentum offset"));
        }
        Ok(ActionQuery { y, x, t, p })
    }

    pub fn dim(&self) -> usize {
        self.y.dim()
    }

    /// `y - x + T P`, the real lift at which the free (kinetic) cost is smallest.
    fn lift_center(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.y.coords()[i] - self.x.coords()[i] + self.t * self.p[i])
            .collect()
    }

    fn displacement(&self, lift: &[i64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.x.coords()[i] + lift[i] as f64 - self.y.coords()[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionConfig {
    /// Number of path segments `M`.
    pub segments: usize,
    /// Initial paths per lift when the action may be non-convex.
    pub multistarts: usize,
    /// Max-norm tolerance on the gradient of the discrete action.
    pub tol: f64,
    pub max_iter: usize,
    /// Target `|A(M) - A(2M)|` for [`action_refined`].
    pub refine_tol: f64,
    pub max_segments: usize,
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig {
            segments: 32,
            multistarts: 3,
            tol: 1e-8,
            max_iter: 100,
            refine_tol: 1e-6,
            max_segments: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSolution {
    pub dim: usize,
    pub lift: Vec<i64>,
    /// `M + 1` unrolled nodes, flattened; node 0 is `y`, node `M` is `x + lift`.
    pub nodes: Vec<f64>,
    pub time: f64,
    /// Mechanical action `S0` of the discrete path.
    pub mechanical_action: f64,
    /// Normalized action `A` including the momentum offset.
    pub action_value: f64,
    /// Momentum at the start, `-dS0/dy`.
    pub p0: Vec<f64>,
    /// Momentum at the end, `dS0/dx`.
    pub p_t: Vec<f64>,
    pub converged: bool,
    /// Max norm of the discrete Euler-Lagrange residual over interior nodes.
    pub el_residual: f64,
}

impl PathSolution {
    pub fn segments(&self) -> usize {
        self.nodes.len() / self.dim - 1
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    /// `dA/dy = (P - p0) / T`.
    pub fn grad_source(&self, p: &[f64]) -> Vec<f64> {
        self.p0.iter().zip(p).map(|(m, q)| (q - m) / self.time).collect()
    }

    /// `dA/dx = (p_T - P) / T`.
    pub fn grad_target(&self, p: &[f64]) -> Vec<f64> {
        self.p_t.iter().zip(p).map(|(m, q)| (m - q) / self.time).collect()
    }
}

/// Closed form for `Xi = 0`: `||x - y - T P||^2 / (2 T^2)` in the torus metric.
pub fn action_zero_potential(q: &ActionQuery) -> f64 {
    let shift: Vec<f64> = q.p.iter().map(|c| c * q.t).collect();
    let d = min_displacement(&q.x, &q.y, &shift).expect("query dimensions were validated");
    d.norm_squared() / (2.0 * q.t * q.t)
}

/// Integer lifts `z` that can host the minimizing path: every component
/// within `R = ceil(T sqrt(2 (max Xi - min Xi))) + 1` of the free-flight
/// center `y - x + T P`.
pub fn lift_window(q: &ActionQuery, xi: &TrigPotential) -> Vec<Vec<i64>> {
    let cert = xi.certified_max();
    let spread = (cert.value - cert.grid_min).max(0.0);
    let radius = (q.t * (2.0 * spread).sqrt()).ceil() + 1.0;
    let center = q.lift_center();
    let ranges: Vec<(i64, i64)> = center
        .iter()
        .map(|c| ((c - radius).ceil() as i64, (c + radius).floor() as i64))
        .collect();
    let mut out = Vec::new();
    let mut z: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        out.push(z.clone());
        let mut i = 0;
        loop {
            if i == z.len() {
                return out;
            }
            z[i] += 1;
            if z[i] > ranges[i].1 {
                z[i] = ranges[i].0;
                i += 1;
            } else {
                break;
            }
        }
    }
}

/// Minimizes the action over all lifts in [`lift_window`] with `segments`
/// path segments and default solver settings.
pub fn action_general(q: &ActionQuery, xi: &TrigPotential, segments: usize) -> Result<PathSolution> {
    let cfg = ActionConfig {
        segments,
        ..ActionConfig::default()
    };
    action_general_with(q, xi, &cfg)
}

pub fn action_general_with(q: &ActionQuery, xi: &TrigPotential, cfg: &ActionConfig) -> Result<PathSolution> {
    check_dim(q.dim(), xi.dim())?;
    if cfg.segments < 8 {
        return Err(Error::invalid(format!("need at least 8 segments, got {}", cfg.segments)));
    }
    let t2 = 2.0 * q.t * q.t;
    let max_upper = xi.certified_max().upper();
    let mut candidates: Vec<(f64, Vec<i64>)> = lift_window(q, xi)
        .into_iter()
        .map(|z| {
            let d = q.displacement(&z);
            let free: f64 = d.iter().zip(&q.p).map(|(a, p)| (a - q.t * p).powi(2)).sum();
            (free, z)
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let mut best: Option<PathSolution> = None;
    for (free, z) in candidates {
        if let Some(b) = &best {
            // Jensen: A >= |d - T P|^2 / (2 T^2) - max Xi
            if free / t2 - max_upper >= b.action_value {
                break;
            }
        }
        let sol = solve_lift(q, xi, &z, cfg);
        let replace = match &best {
            None => true,
            Some(b) => {
                (sol.converged && !b.converged)
                    || (sol.converged == b.converged && sol.action_value < b.action_value)
            }
        };
        if replace {
            best = Some(sol);
        }
    }
    let best = best.expect("lift window is never empty");
    if best.converged {
        Ok(best)
    } else {
        let gradient = best.el_residual * q.t / cfg.segments as f64;
        Err(Error::OptimizationFailure {
            best: Box::new(best),
            gradient,
        })
    }
}

/// Doubles the segment count from `cfg.segments` until consecutive values
/// agree within `cfg.refine_tol`. Returns the finest solution and the last
/// observed gap.
pub fn action_refined(q: &ActionQuery, xi: &TrigPotential, cfg: &ActionConfig) -> Result<(PathSolution, f64)> {
    let mut local = *cfg;
    let mut coarse = action_general_with(q, xi, &local)?;
    loop {
        local.segments *= 2;
        let fine = action_general_with(q, xi, &local)?;
        let gap = (coarse.action_value - fine.action_value).abs();
        if gap < cfg.refine_tol || local.segments * 2 > cfg.max_segments {
            return Ok((fine, gap));
        }
        coarse = fine;
    }
}

/// The discrete mechanical action on a fixed lift.
struct PathProblem<'a> {
    xi: &'a TrigPotential,
    n: usize,
    m: usize,
    h: f64,
}

struct Workspace {
    seg_grad: Vec<f64>,
    seg_hess: Vec<f64>,
    grad: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl<'a> PathProblem<'a> {
    fn workspace(&self) -> Workspace {
        let n = self.n;
        let interior = self.m - 1;
        Workspace {
            seg_grad: vec![0.0; 2 * n],
            seg_hess: vec![0.0; 4 * n * n],
            grad: vec![0.0; interior * n],
            diag: vec![0.0; interior * n * n],
            upper: vec![0.0; interior.saturating_sub(1) * n * n],
        }
    }

    fn value(&self, nodes: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for k in 0..self.m {
            let u = &nodes[k * n..(k + 1) * n];
            let v = &nodes[(k + 1) * n..(k + 2) * n];
            let kin: f64 = u.iter().zip(v).map(|(a, b)| (b - a) * (b - a)).sum();
            s += kin / (2.0 * self.h) - self.h * self.xi.segment_mean(u, v);
        }
        s
    }

    /// Value, interior gradient and block-tridiagonal Hessian.
    fn assemble(&self, nodes: &[f64], ws: &mut Workspace) -> f64 {
        let n = self.n;
        let nn = n * n;
        let h = self.h;
        ws.grad.iter_mut().for_each(|g| *g = 0.0);
        ws.diag.iter_mut().for_each(|g| *g = 0.0);
        ws.upper.iter_mut().for_each(|g| *g = 0.0);
        let mut s = 0.0;
        for k in 0..self.m {
            let u = &nodes[k * n..(k + 1) * n];
            let v = &nodes[(k + 1) * n..(k + 2) * n];
            let mean = self.xi.segment_mean_derivatives(u, v, &mut ws.seg_grad, &mut ws.seg_hess);
            let kin: f64 = u.iter().zip(v).map(|(a, b)| (b - a) * (b - a)).sum();
            s += kin / (2.0 * h) - h * mean;
            // node k is the start of segment k, node k+1 its end
            if k >= 1 {
                let bi = k - 1;
                for r in 0..n {
                    ws.grad[bi * n + r] += (u[r] - v[r]) / h - h * ws.seg_grad[r];
                    ws.diag[bi * nn + r * n + r] += 1.0 / h;
                    for c in 0..n {
                        ws.diag[bi * nn + r * n + c] -= h * ws.seg_hess[r * 2 * n + c];
                    }
                }
            }
            if k + 1 < self.m {
                let bi = k;
                for r in 0..n {
                    ws.grad[bi * n + r] += (v[r] - u[r]) / h - h * ws.seg_grad[n + r];
                    ws.diag[bi * nn + r * n + r] += 1.0 / h;
                    for c in 0..n {
                        ws.diag[bi * nn + r * n + c] -= h * ws.seg_hess[(n + r) * 2 * n + n + c];
                    }
                }
            }
            if k >= 1 && k + 1 < self.m {
                let bi = k - 1;
                for r in 0..n {
                    ws.upper[bi * nn + r * n + r] -= 1.0 / h;
                    for c in 0..n {
                        ws.upper[bi * nn + r * n + c] -= h * ws.seg_hess[r * 2 * n + n + c];
                    }
                }
            }
        }
        s
    }

    /// Damped Newton from `nodes`; returns `(S0, max |grad|)`.
    fn minimize(&self, nodes: &mut [f64], tol: f64, max_iter: usize) -> (f64, f64) {
        let n = self.n;
        let interior = self.m - 1;
        let mut ws = self.workspace();
        let kin_scale = 2.0 / self.h;
        let mut lambda = 0.0;
        let mut value = self.assemble(nodes, &mut ws);
        let mut gnorm = max_abs(&ws.grad);
        let mut trial = nodes.to_vec();
        let mut spare = self.workspace();
        for _ in 0..max_iter {
            if gnorm < tol {
                break;
            }
            let step = loop {
                let mut diag = ws.diag.clone();
                if lambda > 0.0 {
                    for b in 0..interior {
                        for r in 0..n {
                            diag[b * n * n + r * n + r] += lambda;
                        }
                    }
                }
                let rhs: Vec<f64> = ws.grad.iter().map(|g| -g).collect();
                match linalg::block_tridiagonal_spd_solve(&diag, &ws.upper, &rhs, interior, n) {
                    Some(s) => break Some(s),
                    None => {
                        lambda = (lambda * 4.0).max(1e-3 * kin_scale);
                        if lambda > 1e12 * kin_scale {
                            break None;
                        }
                    }
                }
            };
            let Some(step) = step else { break };
            let slope: f64 = step.iter().zip(&ws.grad).map(|(a, b)| a * b).sum();
            let mut alpha = 1.0;
            let mut accepted = false;
            let mut assembled = false;
            for attempt in 0..40 {
                trial.copy_from_slice(nodes);
                for (i, s) in step.iter().enumerate() {
                    trial[n + i] += alpha * s;
                }
                // the full step usually succeeds, so assemble it right away
                let tv = if attempt == 0 {
                    self.assemble(&trial, &mut spare)
                } else {
                    self.value(&trial)
                };
                // close to the minimum the value only moves at rounding level, and
                // a full step that shrinks the gradient is still progress
                let flat = attempt == 0
                    && tv <= value + 1e-13 * value.abs().max(1.0)
                    && max_abs(&spare.grad) < gnorm;
                if tv <= value + 1e-4 * alpha * slope || flat {
                    accepted = true;
                    assembled = attempt == 0;
                    value = tv;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted {
                nodes.copy_from_slice(&trial);
                if alpha == 1.0 {
                    lambda *= 0.25;
                    if lambda < 1e-10 * kin_scale {
                        lambda = 0.0;
                    }
                }
            } else {
                // Newton step useless at this precision; stop unless damping helps
                lambda = (lambda * 4.0).max(1e-3 * kin_scale);
                if lambda > 1e12 * kin_scale {
                    break;
                }
            }
            if assembled {
                std::mem::swap(&mut ws, &mut spare);
            } else if accepted {
                value = self.assemble(nodes, &mut ws);
            }
            gnorm = max_abs(&ws.grad);
        }
        (value, gnorm)
    }

    /// `p0 = -dS0/dy` and `p_T = dS0/dx` at the given nodes.
    fn boundary_momenta(&self, nodes: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let h = self.h;
        let mut g = vec![0.0; 2 * n];
        let mut hs = vec![0.0; 4 * n * n];
        let m = self.m;
        self.xi.segment_mean_derivatives(&nodes[..n], &nodes[n..2 * n], &mut g, &mut hs);
        let p0 = (0..n).map(|r| (nodes[n + r] - nodes[r]) / h + h * g[r]).collect();
        let (u, v) = (&nodes[(m - 1) * n..m * n], &nodes[m * n..(m + 1) * n]);
        self.xi.segment_mean_derivatives(u, v, &mut g, &mut hs);
        let pt = (0..n).map(|r| (v[r] - u[r]) / h - h * g[n + r]).collect();
        (p0, pt)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimizes `S0` on one lift, with multistart when the action can be
/// non-convex for this horizon. No lift search and no convergence check.
pub fn solve_lift(q: &ActionQuery, xi: &TrigPotential, lift: &[i64], cfg: &ActionConfig) -> PathSolution {
    let n = q.dim();
    let m = cfg.segments;
    let h = q.t / m as f64;
    let problem = PathProblem { xi, n, m, h };
    let start = q.y.coords();
    let d = q.displacement(lift);

    // Poincare: int |dx'|^2 >= (pi/T)^2 int |dx|^2, so the action is strictly
    // convex on paths with fixed ends whenever T^2 * curvature < pi^2.
    let convex = q.t * q.t * xi.curvature_bound() < PI * PI;
    let starts = if convex { 1 } else { cfg.multistarts.max(1) };

    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for s in 0..starts {
        let amp = if s == 0 {
            0.0
        } else {
            let r = s.div_ceil(2) as f64 * 0.25;
            if s % 2 == 1 {
                r
            } else {
                -r
            }
        };
        let mut nodes = vec![0.0; (m + 1) * n];
        for k in 0..=m {
            let frac = k as f64 / m as f64;
            let bump = amp * (PI * frac).sin();
            for c in 0..n {
                nodes[k * n + c] = start[c] + frac * d[c] + bump;
            }
        }
        // endpoints are exact
        for c in 0..n {
            nodes[c] = start[c];
            nodes[m * n + c] = start[c] + d[c];
        }
        let (value, gnorm) = problem.minimize(&mut nodes, cfg.tol, cfg.max_iter);
        let better = match &best {
            None => true,
            Some((bv, bg, _)) => {
                let (conv_new, conv_old) = (gnorm < cfg.tol, *bg < cfg.tol);
                (conv_new && !conv_old) || (conv_new == conv_old && value < *bv)
            }
        };
        if better {
            best = Some((value, gnorm, nodes));
        }
    }
    let (s0, gnorm, nodes) = best.expect("at least one start");
    let (p0, p_t) = problem.boundary_momenta(&nodes);
    let pd: f64 = q.p.iter().zip(&d).map(|(a, b)| a * b).sum();
    let p2: f64 = q.p.iter().map(|a| a * a).sum();
    PathSolution {
        dim: n,
        lift: lift.to_vec(),
        nodes,
        time: q.t,
        mechanical_action: s0,
        action_value: (s0 - pd) / q.t + 0.5 * p2,
        p0,
        p_t,
        converged: gnorm < cfg.tol,
        el_residual: gnorm / h,
    }
}

/// Lift of `x` nearest to `y + T P`, used when only the free-flight branch matters.
pub fn free_flight_lift(q: &ActionQuery) -> Vec<i64> {
    q.lift_center().iter().map(|c| nearest_lift(*c) as i64).collect()
}
