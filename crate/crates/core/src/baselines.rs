//! Independent estimators of the effective Hamiltonian: a smoothed grid
//! min-max `inf_phi max_x |D phi + P|^2/2 + Xi`, and the 1-D energy-level
//! quadrature `P = int_0^1 sqrt(2 (E - Xi))`.

use serde::{Deserialize, Serialize};

use crate::dirichlet::GridField;
use crate::error::{check_dim, Error, Result};
use crate::optim::{lbfgs, LbfgsConfig};
use crate::potential::TrigPotential;
use crate::quadrature::integrate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxConfig {
    pub grid: usize,
    pub tau_start: f64,
    /// Temperature is multiplied by this after every stage.
    pub tau_factor: f64,
    pub iters_per_stage: usize,
}

impl MinMaxConfig {
    pub fn new(grid: usize) -> Self {
        MinMaxConfig {
            grid,
            tau_start: 1.0,
            tau_factor: 0.5,
            iters_per_stage: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxResult {
    pub p: Vec<f64>,
    /// Exact max over cells at the final iterate, an upper bound for the
    /// grid problem.
    pub h_upper: f64,
    /// `tau log sum exp(h_k / tau)` at the final iterate and temperature.
    pub h_smoothed: f64,
    pub iterations: usize,
    /// Temperatures of the continuation stages, in order.
    pub temperatures: Vec<f64>,
    pub converged: bool,
    /// `tau log(cells)` at the final temperature.
    pub gap_bound: f64,
}

struct CellProblem<'a> {
    grid: GridField,
    potential: Vec<f64>,
    p: &'a [f64],
}

impl CellProblem<'_> {
    /// Cell values `|D+ phi + P|^2 / 2 + Xi(x_k)` and the forward velocities.
    fn cells(&self, phi: &[f64], vel: &mut [Vec<f64>]) -> Vec<f64> {
        let g = &self.grid;
        let inv_h = g.size as f64;
        let mut h = self.potential.clone();
        for (d, v) in vel.iter_mut().enumerate() {
            for k in 0..g.len() {
                let w = (phi[g.forward(k, d)] - phi[k]) * inv_h + self.p[d];
                v[k] = w;
                h[k] += 0.5 * w * w;
            }
        }
        h
    }

    /// Smoothed max and its gradient.
    fn smoothed(&self, phi: &[f64], tau: f64, grad: &mut [f64]) -> f64 {
        let g = &self.grid;
        let mut vel = vec![vec![0.0; g.len()]; g.dim];
        let h = self.cells(phi, &mut vel);
        let top = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = h.iter().map(|v| ((v - top) / tau).exp()).collect();
        let total: f64 = weights.iter().sum();
        grad.iter_mut().for_each(|x| *x = 0.0);
        let inv_h = g.size as f64;
        for (d, v) in vel.iter().enumerate() {
            for k in 0..g.len() {
                let c = weights[k] / total * v[k] * inv_h;
                grad[g.forward(k, d)] += c;
                grad[k] -= c;
            }
        }
        top + tau * total.ln()
    }

    /// Hessian of the smoothed max at `phi` applied to `v`.
    fn hess_vec(&self, phi: &[f64], tau: f64, v: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let n = g.size as f64;
        let mut vel = vec![vec![0.0; g.len()]; g.dim];
        let h = self.cells(phi, &mut vel);
        let top = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut pi: Vec<f64> = h.iter().map(|x| ((x - top) / tau).exp()).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|x| *x /= total);
        // directional derivatives of every cell value, and of the smoothed max
        let mut a = vec![0.0; g.len()];
        for (d, w) in vel.iter().enumerate() {
            for k in 0..g.len() {
                a[k] += w[k] * (v[g.forward(k, d)] - v[k]) * n;
            }
        }
        let abar: f64 = pi.iter().zip(&a).map(|(p, x)| p * x).sum();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (d, w) in vel.iter().enumerate() {
            for k in 0..g.len() {
                let f = g.forward(k, d);
                let c = pi[k] * (n * n * (v[f] - v[k]) + (a[k] - abar) * w[k] * n / tau);
                out[f] += c;
                out[k] -= c;
            }
        }
    }

    /// Truncated Newton at fixed temperature, used to finish the last stage
    /// beyond what L-BFGS reaches on the stiff smoothed problem.
    fn newton_polish(&self, phi: &mut Vec<f64>, tau: f64, gtol: f64) -> (usize, bool) {
        let m = phi.len();
        let mut grad = vec![0.0; m];
        let mut value = self.smoothed(phi, tau, &mut grad);
        for it in 0..50 {
            if max_abs(&grad) < gtol {
                return (it, true);
            }
            let rhs: Vec<f64> = grad.iter().map(|x| -x).collect();
            let step = conjugate_gradient(|v, out| self.hess_vec(phi, tau, v, out), &rhs, 1e-10, 4 * m);
            let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
            if !(slope < 0.0) {
                return (it, false);
            }
            let mut alpha = 1.0;
            let mut trial = vec![0.0; m];
            let mut trial_grad = vec![0.0; m];
            let accepted = loop {
                for i in 0..m {
                    trial[i] = phi[i] + alpha * step[i];
                }
                let v = self.smoothed(&trial, tau, &mut trial_grad);
                // near the optimum the value stalls at rounding level, so a
                // smaller gradient at an equal value is also progress
                let flat = v <= value + 1e-14 * value.abs().max(1.0) && max_abs(&trial_grad) < max_abs(&grad);
                if v <= value + 1e-4 * alpha * slope || flat {
                    break Some(v);
                }
                alpha *= 0.5;
                if alpha < 1e-10 {
                    break None;
                }
            };
            let Some(v) = accepted else {
                return (it, max_abs(&grad) < gtol);
            };
            std::mem::swap(phi, &mut trial);
            std::mem::swap(&mut grad, &mut trial_grad);
            value = v;
        }
        (50, max_abs(&grad) < gtol)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Plain CG for a positive semidefinite operator, from zero.
fn conjugate_gradient(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], rel_tol: f64, max_iter: usize) -> Vec<f64> {
    let m = b.len();
    let mut x = vec![0.0; m];
    let mut r = b.to_vec();
    let mut d = r.clone();
    let mut q = vec![0.0; m];
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rr = b_norm * b_norm;
    for _ in 0..max_iter {
        if rr.sqrt() <= rel_tol * b_norm {
            break;
        }
        apply(&d, &mut q);
        let dq: f64 = d.iter().zip(&q).map(|(a, b)| a * b).sum();
        if !(dq > 0.0) {
            break;
        }
        let alpha = rr / dq;
        for i in 0..m {
            x[i] += alpha * d[i];
            r[i] -= alpha * q[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..m {
            d[i] = r[i] + beta * d[i];
        }
    }
    if x.iter().all(|v| *v == 0.0) {
        // no curvature information, fall back to steepest descent
        return b.to_vec();
    }
    x
}

/// Log-sum-exp smoothing with temperature continuation from `tau_start`
/// down to `1e-3 range(Xi) + 1e-6`.
pub fn minmax_h(xi: &TrigPotential, p: &[f64], grid: usize) -> Result<MinMaxResult> {
    minmax_h_with(xi, p, &MinMaxConfig::new(grid))
}

pub fn minmax_h_with(xi: &TrigPotential, p: &[f64], cfg: &MinMaxConfig) -> Result<MinMaxResult> {
    check_dim(xi.dim(), p.len())?;
    if !(1..=2).contains(&xi.dim()) {
        return Err(Error::invalid("the min-max baseline supports n = 1, 2"));
    }
    if cfg.grid < 32 {
        return Err(Error::invalid(format!("min-max grid must have N >= 32, got {}", cfg.grid)));
    }
    if !(cfg.tau_factor > 0.0 && cfg.tau_factor < 1.0) || !(cfg.tau_start > 0.0) {
        return Err(Error::invalid("temperature schedule must decrease from a positive start"));
    }
    let grid = GridField::zeros(xi.dim(), cfg.grid);
    let potential: Vec<f64> = (0..grid.len()).map(|k| xi.value_at(&grid.node(k))).collect();
    let cert = xi.certified_max();
    let range = (cert.value - cert.grid_min).max(0.0);
    let tau_end = 1e-3 * range + 1e-6;
    let problem = CellProblem { grid, potential, p };
    let cells = problem.grid.len();

    let mut phi = vec![0.0; cells];
    let mut temperatures = Vec::new();
    let mut iterations = 0;
    let mut tau = cfg.tau_start;
    let converged = loop {
        let tau_now = tau.max(tau_end);
        temperatures.push(tau_now);
        let lcfg = LbfgsConfig {
            max_iter: cfg.iters_per_stage,
            memory: 10,
            // gradient entries scale like N; the value has units of energy
            gtol: 1e-13 * cfg.grid as f64,
            ftol: 1e-15,
            max_step: f64::INFINITY,
        };
        let res = lbfgs(&phi, |x, g| problem.smoothed(x, tau_now, g), &lcfg);
        iterations += res.iterations;
        phi = res.x;
        if tau_now <= tau_end {
            let (its, ok) = problem.newton_polish(&mut phi, tau_now, lcfg.gtol);
            iterations += its;
            break res.converged || ok;
        }
        tau *= cfg.tau_factor;
    };
    let tau_final = *temperatures.last().expect("at least one stage");
    let mut vel = vec![vec![0.0; cells]; xi.dim()];
    let h = problem.cells(&phi, &mut vel);
    let h_upper = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut scratch = vec![0.0; cells];
    let h_smoothed = problem.smoothed(&phi, tau_final, &mut scratch);
    Ok(MinMaxResult {
        p: p.to_vec(),
        h_upper,
        h_smoothed,
        iterations,
        temperatures,
        converged,
        gap_bound: tau_final * (cells as f64).ln(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature1DResult {
    pub p: f64,
    /// Energy level, the effective Hamiltonian at `p`.
    pub e: f64,
    pub plateau: bool,
    /// Critical momentum `int sqrt(2 (max Xi - Xi))`.
    pub p_c: f64,
}

const QUAD_TOL: f64 = 1e-13;

/// `int_0^1 sqrt(2 (E - Xi))` over a period starting at the maximizer, so the
/// kink of the integrand sits at the ends.
fn momentum_of_level(xi: &TrigPotential, start: f64, e: f64) -> Result<f64> {
    Ok(integrate(|x| (2.0 * (e - xi.value_at(&[x]))).max(0.0).sqrt(), start, start + 1.0, QUAD_TOL)?.value)
}

/// `d/dE int sqrt(2 (E - Xi)) = int 1 / sqrt(2 (E - Xi))`, for `E > max Xi`.
/// Nearly singular close to the plateau edge; `None` there, and the caller
/// bisects instead.
fn momentum_slope(xi: &TrigPotential, start: f64, e: f64) -> Option<f64> {
    integrate(|x| 1.0 / (2.0 * (e - xi.value_at(&[x]))).max(1e-300).sqrt(), start, start + 1.0, 1e-8)
        .ok()
        .map(|r| r.value)
}

/// Energy level `E(P)` of the 1-D cell problem: `E = max Xi` on the plateau
/// `|P| <= P_c`, otherwise the root of `int sqrt(2 (E - Xi)) = |P|`.
pub fn oracle_1d(xi: &TrigPotential, p: f64) -> Result<Quadrature1DResult> {
    if xi.dim() != 1 {
        return Err(Error::invalid("the quadrature oracle is one-dimensional"));
    }
    if !p.is_finite() {
        return Err(Error::invalid("non-finite momentum"));
    }
    let target = p.abs();
    let cert = xi.certified_max();
    let top = cert.value;
    let start = cert.argmax.coords()[0];
    let p_c = momentum_of_level(xi, start, top)?;
    if target <= p_c {
        return Ok(Quadrature1DResult {
            p,
            e: top,
            plateau: true,
            p_c,
        });
    }
    // g(E) = int sqrt(2 (E - Xi)) - |P| is increasing and concave in E
    let (mut lo, mut hi) = (top, top + 0.5 * target * target);
    let mut e = hi;
    for _ in 0..200 {
        let g = momentum_of_level(xi, start, e)? - target;
        if g.abs() < 1e-10 {
            break;
        }
        if g > 0.0 {
            hi = e;
        } else {
            lo = e;
        }
        let newton = match momentum_slope(xi, start, e) {
            Some(slope) if e > top => e - g / slope,
            _ => f64::NAN,
        };
        e = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(Quadrature1DResult {
        p,
        e,
        plateau: false,
        p_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Mode;
    use std::f64::consts::PI;

    fn pendulum() -> TrigPotential {
        TrigPotential::cosine(1, 1.0)
    }

    #[test]
    fn oracle_free_particle() {
        let zero = TrigPotential::zero(1);
        for p in [0.0, 0.4, 1.7, -2.2] {
            let r = oracle_1d(&zero, p).unwrap();
            assert!((r.e - 0.5 * p * p).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_pendulum_plateau() {
        let r = oracle_1d(&pendulum(), 0.5).unwrap();
        assert!(r.plateau);
        assert_eq!(r.e, 1.0);
        assert!((r.p_c - 4.0 / PI).abs() < 1e-11);
        let edge = oracle_1d(&pendulum(), 4.0 / PI).unwrap();
        assert!((edge.e - 1.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_solves_the_level_condition() {
        let xi = pendulum();
        for p in [1.5, 2.0, 2.5] {
            let r = oracle_1d(&xi, p).unwrap();
            assert!(!r.plateau && r.e > 1.0);
            // independent check with a fine midpoint rule
            let n = 200_000;
            let m: f64 = (0..n)
                .map(|i| {
                    let x = (i as f64 + 0.5) / n as f64;
                    (2.0 * (r.e - (2.0 * PI * x).cos())).sqrt()
                })
                .sum::<f64>()
                / n as f64;
            assert!((m - p).abs() < 1e-8, "{p}: {m}");
        }
    }

    #[test]
    fn oracle_is_increasing_and_convex_past_the_plateau() {
        let xi = pendulum();
        let ps: Vec<f64> = (0..12).map(|i| 1.3 + 0.15 * i as f64).collect();
        let es: Vec<f64> = ps.iter().map(|&p| oracle_1d(&xi, p).unwrap().e).collect();
        for w in es.windows(3) {
            assert!(w[1] >= w[0]);
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9);
        }
    }

    #[test]
    fn minmax_free_particle_is_exact() {
        let zero = TrigPotential::zero(1);
        for p in [0.3, 1.0] {
            let r = minmax_h(&zero, &[p], 64).unwrap();
            assert!((r.h_upper - 0.5 * p * p).abs() < 1e-8);
        }
        let r = minmax_h(&TrigPotential::zero(2), &[0.3, -0.4], 32).unwrap();
        assert!((r.h_upper - 0.125).abs() < 1e-8);
    }

    #[test]
    fn minmax_pendulum_at_rest() {
        let r = minmax_h(&pendulum(), &[0.0], 128).unwrap();
        assert!((r.h_upper - 1.0).abs() < 1e-3, "{}", r.h_upper);
        assert!(r.h_upper >= 1.0 - 1e-9);
        assert!(r.h_upper >= r.h_smoothed - r.gap_bound - 1e-12);
        assert!(r.temperatures.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn minmax_matches_oracle_off_plateau() {
        let xi = pendulum();
        let r = minmax_h(&xi, &[2.0], 512).unwrap();
        let e = oracle_1d(&xi, 2.0).unwrap().e;
        assert!(((r.h_upper - e) / e).abs() < 0.01, "{} vs {e}", r.h_upper);
    }

    #[test]
    fn minmax_refinement_shrinks_differences() {
        // maximizer on a node, so sampling the max adds no grid-phase jitter
        let xi = TrigPotential::new(1, vec![Mode::new(vec![1], 1.0, 0.0), Mode::new(vec![2], 0.3, 0.0)]).unwrap();
        let h: Vec<f64> = [32, 64, 128, 256].iter().map(|&n| minmax_h(&xi, &[1.8], n).unwrap().h_upper).collect();
        let d: Vec<f64> = h.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{h:?}");
    }

    #[test]
    fn minmax_tracks_oracle_across_momenta() {
        let xi = pendulum();
        let n = 64;
        for i in 0..=12 {
            let p = 0.25 * i as f64;
            let h = minmax_h(&xi, &[p], n).unwrap().h_upper;
            let e = oracle_1d(&xi, p).unwrap().e;
            assert!(((h - e) / e).abs() <= (0.01f64).max(3.0 / n as f64), "{p}: {h} vs {e}");
        }
    }

    #[test]
    fn minmax_separable_potential_in_two_dimensions() {
        // cos(2 pi x) + cos(2 pi y) splits into two pendulums
        let xi = TrigPotential::new(2, vec![Mode::new(vec![1, 0], 1.0, 0.0), Mode::new(vec![0, 1], 1.0, 0.0)]).unwrap();
        let p = [2.0, 0.5];
        let r = minmax_h(&xi, &p, 32).unwrap();
        let e = oracle_1d(&pendulum(), 2.0).unwrap().e + oracle_1d(&pendulum(), 0.5).unwrap().e;
        assert!(((r.h_upper - e) / e).abs() < 0.01, "{} vs {e}", r.h_upper);
        assert!(r.h_upper >= 2.0 - 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(minmax_h(&pendulum(), &[1.0], 16).is_err());
        assert!(minmax_h(&TrigPotential::zero(3), &[0.0; 3], 32).is_err());
        assert!(oracle_1d(&TrigPotential::zero(2), 1.0).is_err());
    }
}
