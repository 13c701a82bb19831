//! Limited-memory BFGS with Armijo backtracking, used for the configuration
//! descent and the smoothed min-max baseline.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the max-norm of the gradient drops below this.
    pub gtol: f64,
    /// Stop when an iteration improves the value by less than
    /// `ftol * max(|f|, 1)`.
    pub ftol: f64,
    /// Upper bound on the max-norm of any single step.
    pub max_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 8,
            max_iter: 200,
            gtol: 1e-8,
            ftol: 1e-12,
            max_step: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the value and writes the gradient into its
/// second argument.
pub fn lbfgs<F>(x0: &[f64], mut f: F, cfg: &LbfgsConfig) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; dim];
    let mut value = f(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut alpha_hist = vec![0.0; cfg.memory];

    let mut iterations = 0;
    let mut converged = max_abs(&g) < cfg.gtol;
    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        for (slot, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_hist[slot] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        } else {
            // first step: unit max-norm move scaled by the gradient
            let gn = max_abs(&g);
            d.iter_mut().for_each(|di| *di /= gn.max(1.0));
        }
        for (slot, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha_hist[slot] - b) * si);
        }
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let dn = max_abs(&d);
        if dn > cfg.max_step {
            let scale = cfg.max_step / dn;
            d.iter_mut().for_each(|di| *di *= scale);
            slope *= scale;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            for i in 0..dim {
                x_new[i] = x[i] + step * d[i];
            }
            let v = f(&x_new, &mut g_new);
            if v.is_finite() && v <= value + 1e-4 * step * slope {
                accepted = Some(v);
                break;
            }
            step *= 0.5;
        }
        let Some(v_new) = accepted else {
            // no decrease at machine precision: treat as stationary
            converged = max_abs(&g) < cfg.gtol.max(1e-6);
            break;
        };

        let s: Vec<f64> = (0..dim).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..dim).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let improvement = value - v_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        value = v_new;
        if max_abs(&g) < cfg.gtol || improvement <= cfg.ftol * value.abs().max(1.0) {
            converged = true;
        }
    }
    LbfgsResult {
        grad_norm: max_abs(&g),
        x,
        value,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let cfg = LbfgsConfig {
            max_iter: 500,
            ftol: 0.0,
            ..LbfgsConfig::default()
        };
        let r = lbfgs(&[-1.2, 1.0], f, &cfg);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn respects_step_cap() {
        let cfg = LbfgsConfig {
            max_iter: 1,
            max_step: 0.1,
            ..LbfgsConfig::default()
        };
        let r = lbfgs(&[0.0], |x, g| {
            g[0] = 2.0 * (x[0] - 10.0);
            (x[0] - 10.0).powi(2)
        }, &cfg);
        assert!((r.x[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn quadratic_in_many_dimensions() {
        let n = 50;
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..n {
                let w = 1.0 + i as f64;
                g[i] = w * (x[i] - 1.0);
                v += 0.5 * w * (x[i] - 1.0).powi(2);
            }
            v
        };
        let r = lbfgs(&vec![0.0; n], f, &LbfgsConfig { ftol: 0.0, ..LbfgsConfig::default() });
        assert!(r.converged);
        assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }
}
