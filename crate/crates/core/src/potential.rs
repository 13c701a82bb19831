//! Periodic potentials as real trigonometric polynomials
//!
//! `Xi(x) = sum_k a_k cos(2 pi k.x) + b_k sin(2 pi k.x)` over a finite set of
//! integer frequency vectors. Besides pointwise values and derivatives this
//! module provides the exact mean of `Xi` along a straight segment, which the
//! path optimizer uses so that the discrete action of a piecewise-linear path
//! is the exact continuous action of that path.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::torus::{canonicalize, TorusPoint};

/// Largest admissible `|k|_inf`.
pub const MAX_FREQUENCY: i64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: Vec<i64>,
    pub a: f64,
    pub b: f64,
}

impl Mode {
    pub fn new(k: Vec<i64>, a: f64, b: f64) -> Self {
        Mode { k, a, b }
    }

    fn amplitude(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

/// Global maximum of a potential together with its certificate.
///
/// `value` is attained at `argmax` (so it never exceeds the true maximum) and
/// the true maximum is at most `value + eps`, where `eps` comes from the
/// Lipschitz bound over the scan grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxCertificate {
    pub value: f64,
    pub argmax: TorusPoint,
    pub eps: f64,
    /// Smallest value seen on the scan grid.
    pub grid_min: f64,
}

impl MaxCertificate {
    pub fn upper(&self) -> f64 {
        self.value + self.eps
    }
}

#[derive(Debug)]
pub struct TrigPotential {
    dim: usize,
    modes: Vec<Mode>,
    // 2 pi k, flattened
    omega: Vec<f64>,
    certificate: OnceLock<MaxCertificate>,
}

impl Clone for TrigPotential {
    fn clone(&self) -> Self {
        TrigPotential {
            dim: self.dim,
            modes: self.modes.clone(),
            omega: self.omega.clone(),
            certificate: self.certificate.clone(),
        }
    }
}

impl PartialEq for TrigPotential {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.modes == other.modes
    }
}

impl TrigPotential {
    pub fn new(dim: usize, modes: Vec<Mode>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("potential dimension must be at least 1"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &modes {
            check_dim(dim, m.k.len())?;
            if !m.a.is_finite() || !m.b.is_finite() {
                return Err(Error::invalid(format!("non-finite coefficient in mode {:?}", m.k)));
            }
            if m.k.iter().any(|c| c.abs() > MAX_FREQUENCY) {
                return Err(Error::invalid(format!(
                    "mode {:?} exceeds the frequency bound {MAX_FREQUENCY}",
                    m.k
                )));
            }
            if m.k.iter().all(|&c| c == 0) && m.b != 0.0 {
                return Err(Error::invalid("the zero-frequency mode must have b = 0"));
            }
            if !seen.insert(m.k.clone()) {
                return Err(Error::invalid(format!("duplicate mode {:?}", m.k)));
            }
        }
        let omega = modes
            .iter()
            .flat_map(|m| m.k.iter().map(|&c| 2.0 * PI * c as f64))
            .collect();
        Ok(TrigPotential {
            dim,
            modes,
            omega,
            certificate: OnceLock::new(),
        })
    }

    /// `Xi = 0` on `T^dim`.
    pub fn zero(dim: usize) -> Self {
        TrigPotential::new(dim, Vec::new()).expect("empty potential is valid")
    }

    /// `amplitude * cos(2 pi x_1)` on `T^dim`.
    pub fn cosine(dim: usize, amplitude: f64) -> Self {
        let mut k = vec![0; dim];
        k[0] = 1;
        TrigPotential::new(dim, vec![Mode::new(k, amplitude, 0.0)]).expect("valid cosine mode")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| m.a == 0.0 && m.b == 0.0)
    }

    /// True when `Xi(x) = Xi(-x)`, i.e. every sine coefficient vanishes.
    pub fn is_even(&self) -> bool {
        self.modes.iter().all(|m| m.b == 0.0)
    }

    #[inline]
    fn omega(&self, i: usize) -> &[f64] {
        &self.omega[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    fn phase(&self, i: usize, x: &[f64]) -> f64 {
        self.omega(i).iter().zip(x).map(|(w, c)| w * c).sum()
    }

    /// Value at an arbitrary point of `R^n`; the potential is 1-periodic.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut s = 0.0;
        for (i, m) in self.modes.iter().enumerate() {
            let (sn, cs) = self.phase(i, x).sin_cos();
            s += m.a * cs + m.b * sn;
        }
        s
    }

    pub fn eval(&self, x: &TorusPoint) -> Result<f64> {
        check_dim(self.dim, x.dim())?;
        Ok(self.value_at(x.coords()))
    }

    /// Gradient at `x`, written into `out`.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for (i, m) in self.modes.iter().enumerate() {
            let (sn, cs) = self.phase(i, x).sin_cos();
            let w = -m.a * sn + m.b * cs;
            for (g, om) in out.iter_mut().zip(self.omega(i)) {
                *g += om * w;
            }
        }
    }

    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        g
    }

    pub fn grad(&self, x: &TorusPoint) -> Result<Vec<f64>> {
        check_dim(self.dim, x.dim())?;
        Ok(self.gradient_at(x.coords()))
    }

    /// Hessian at `x` as a row-major `n x n` matrix.
    pub fn hessian_at(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut h = vec![0.0; n * n];
        for (i, m) in self.modes.iter().enumerate() {
            let (sn, cs) = self.phase(i, x).sin_cos();
            let v = m.a * cs + m.b * sn;
            let om = self.omega(i);
            for r in 0..n {
                for c in 0..n {
                    h[r * n + c] -= om[r] * om[c] * v;
                }
            }
        }
        h
    }

    /// `2 pi sum |k| |c_k|`, a Lipschitz constant of `Xi`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.modes
            .iter()
            .enumerate()
            .map(|(i, m)| self.omega(i).iter().map(|w| w * w).sum::<f64>().sqrt() * m.amplitude())
            .sum()
    }

    /// `sum |2 pi k|^2 |c_k|`, a bound on the spectral norm of the Hessian.
    pub fn curvature_bound(&self) -> f64 {
        self.modes
            .iter()
            .enumerate()
            .map(|(i, m)| self.omega(i).iter().map(|w| w * w).sum::<f64>() * m.amplitude())
            .sum()
    }

    /// Mean of `Xi` along the straight segment from `u` to `v`:
    /// `int_0^1 Xi(u + s (v - u)) ds`.
    pub fn segment_mean(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, m) in self.modes.iter().enumerate() {
            let om = self.omega(i);
            let mut theta = 0.0;
            let mut t = 0.0;
            for c in 0..self.dim {
                theta += om[c] * 0.5 * (u[c] + v[c]);
                t += om[c] * 0.5 * (v[c] - u[c]);
            }
            let (sn, cs) = theta.sin_cos();
            s += (m.a * cs + m.b * sn) * sinc(t).0;
        }
        s
    }

    /// Segment mean with its gradient (length `2n`, `u` first) and Hessian
    /// (`2n x 2n`, row-major) with respect to both endpoints.
    pub(crate) fn segment_mean_derivatives(
        &self,
        u: &[f64],
        v: &[f64],
        grad: &mut [f64],
        hess: &mut [f64],
    ) -> f64 {
        let n = self.dim;
        let nn = 2 * n;
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        let mut value = 0.0;
        for (i, m) in self.modes.iter().enumerate() {
            let om = self.omega(i);
            let mut theta = 0.0;
            let mut t = 0.0;
            for c in 0..n {
                theta += om[c] * 0.5 * (u[c] + v[c]);
                t += om[c] * 0.5 * (v[c] - u[c]);
            }
            let (sn, cs) = theta.sin_cos();
            let val = m.a * cs + m.b * sn;
            let dval = -m.a * sn + m.b * cs;
            let (s0, s1, s2) = sinc(t);
            value += val * s0;

            let gu = 0.5 * (dval * s0 - val * s1);
            let gv = 0.5 * (dval * s0 + val * s1);
            let alpha = -val * s0;
            let beta = 0.5 * dval * s1;
            let gamma = 0.25 * val * s2;
            let cuu = 0.25 * alpha - beta + gamma;
            let cvv = 0.25 * alpha + beta + gamma;
            let cuv = 0.25 * alpha - gamma;
            for r in 0..n {
                grad[r] += om[r] * gu;
                grad[n + r] += om[r] * gv;
                for c in 0..n {
                    let oo = om[r] * om[c];
                    hess[r * nn + c] += oo * cuu;
                    hess[(n + r) * nn + n + c] += oo * cvv;
                    hess[r * nn + n + c] += oo * cuv;
                    hess[(n + r) * nn + c] += oo * cuv;
                }
            }
        }
        value
    }

    /// Global maximum via a dense grid scan refined by Newton ascent.
    /// Computed once and cached.
    pub fn certified_max(&self) -> &MaxCertificate {
        self.certificate.get_or_init(|| self.compute_max())
    }

    fn scan_resolution(&self) -> usize {
        match self.dim {
            1 => 512,
            2 => 256,
            3 => 32,
            _ => 12,
        }
    }

    fn compute_max(&self) -> MaxCertificate {
        let n = self.dim;
        if self.is_zero() {
            let mut value = 0.0;
            // only a zero-frequency constant can survive here
            for m in &self.modes {
                value += m.a;
            }
            return MaxCertificate {
                value,
                argmax: TorusPoint::origin(n),
                eps: 0.0,
                grid_min: value,
            };
        }
        let res = self.scan_resolution();
        let total = res.pow(n as u32);
        let h = 1.0 / res as f64;
        let mut x = vec![0.0; n];
        let mut samples: Vec<(f64, usize)> = Vec::with_capacity(total);
        let mut grid_min = f64::INFINITY;
        for idx in 0..total {
            let mut r = idx;
            for c in (0..n).rev() {
                x[c] = (r % res) as f64 * h;
                r /= res;
            }
            let v = self.value_at(&x);
            grid_min = grid_min.min(v);
            samples.push((v, idx));
        }
        samples.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let grid_best = samples[0].0;

        let mut best_value = f64::NEG_INFINITY;
        let mut best_x = vec![0.0; n];
        for &(v0, idx) in samples.iter().take(8) {
            let mut r = idx;
            for c in (0..n).rev() {
                x[c] = (r % res) as f64 * h;
                r /= res;
            }
            let (v, xr) = self.ascend(&x, v0);
            if v > best_value {
                best_value = v;
                best_x = xr;
            }
        }
        let eps = (self.lipschitz_bound() * h * (n as f64).sqrt() * 0.5 - (best_value - grid_best)).max(0.0);
        MaxCertificate {
            value: best_value,
            argmax: canonicalize(&best_x).expect("finite ascent iterate"),
            eps,
            grid_min,
        }
    }

    /// 50 safeguarded Newton steps uphill from `start`.
    fn ascend(&self, start: &[f64], start_value: f64) -> (f64, Vec<f64>) {
        let n = self.dim;
        let mut x = start.to_vec();
        let mut value = start_value;
        let step_cap = 1.0 / self.curvature_bound().max(1e-300);
        let mut g = vec![0.0; n];
        for _ in 0..50 {
            self.gradient_into(&x, &mut g);
            let gnorm = g.iter().map(|c| c * c).sum::<f64>().sqrt();
            if gnorm < 1e-15 {
                break;
            }
            // Newton on -Xi when its Hessian is positive definite
            let mut neg_h: Vec<f64> = self.hessian_at(&x).iter().map(|c| -c).collect();
            let mut dir = g.clone();
            if linalg::cholesky(&mut neg_h, n) {
                linalg::cholesky_solve(&neg_h, n, &mut dir);
            } else {
                dir.iter_mut().for_each(|d| *d *= step_cap);
            }
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
                let tv = self.value_at(&trial);
                if tv >= value {
                    x = trial;
                    value = tv;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (value, x)
    }

    pub fn to_toml_string(&self) -> String {
        let file = PotentialFile {
            dimension: self.dim,
            modes: self.modes.clone(),
        };
        toml::to_string(&file).expect("potential serializes to TOML")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: PotentialFile = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        TrigPotential::new(file.dimension, file.modes)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}

/// On-disk form shared by potentials and trigonometric densities:
///
/// ```toml
/// dimension = 1
///
/// [[modes]]
/// k = [1]
/// a = 1.0
/// b = 0.0
/// ```
#[derive(Debug, Serialize, Deserialize)]
struct PotentialFile {
    dimension: usize,
    #[serde(default)]
    modes: Vec<Mode>,
}

/// `sin(t)/t` and its first two derivatives.
#[inline]
pub(crate) fn sinc(t: f64) -> (f64, f64, f64) {
    if t == 0.0 {
        return (1.0, 0.0, -1.0 / 3.0);
    }
    if t.abs() < 0.5 {
        // Taylor series in t^2 through t^14, ample for |t| < 1/2
        const C: [f64; 8] = [
            1.0,
            -1.0 / 6.0,
            1.0 / 120.0,
            -1.0 / 5040.0,
            1.0 / 362_880.0,
            -1.0 / 39_916_800.0,
            1.0 / 6_227_020_800.0,
            -1.0 / 1_307_674_368_000.0,
        ];
        let u = t * t;
        let (mut s0, mut d1, mut d2) = (0.0, 0.0, 0.0);
        // s0 = sum c_k u^k, s1 = 2t sum k c_k u^(k-1), s2 = sum 2k(2k-1) c_k u^(k-1)
        for k in (0..8).rev() {
            s0 = s0 * u + C[k];
            if k >= 1 {
                let kf = k as f64;
                d1 = d1 * u + kf * C[k];
                d2 = d2 * u + 2.0 * kf * (2.0 * kf - 1.0) * C[k];
            }
        }
        (s0, 2.0 * t * d1, d2)
    } else {
        let (sn, cs) = t.sin_cos();
        let s0 = sn / t;
        let s1 = (cs - s0) / t;
        let s2 = -s0 - 2.0 * s1 / t;
        (s0, s1, s2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn two_mode() -> TrigPotential {
        TrigPotential::new(
            2,
            vec![Mode::new(vec![1, 0], 0.3, 0.0), Mode::new(vec![0, 2], 0.0, 0.1)],
        )
        .unwrap()
    }

    fn mixed_2d() -> TrigPotential {
        TrigPotential::new(
            2,
            vec![
                Mode::new(vec![1, 0], 0.3, -0.2),
                Mode::new(vec![1, 1], 0.15, 0.05),
                Mode::new(vec![0, 2], 0.0, 0.1),
                Mode::new(vec![0, 0], 0.4, 0.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn eval_examples() {
        let p = TrigPotential::cosine(1, 1.0);
        assert_eq!(p.value_at(&[0.0]), 1.0);
        assert!(p.value_at(&[0.25]).abs() < 1e-15);
        assert!((two_mode().value_at(&[0.5, 0.125]) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn grad_examples() {
        let p = TrigPotential::cosine(1, 1.0);
        assert_eq!(p.gradient_at(&[0.0]), vec![0.0]);
        assert!((p.gradient_at(&[0.25])[0] + 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn grad_matches_central_differences() {
        let p = mixed_2d();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let step = 1e-5;
        for _ in 0..100 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let g = p.gradient_at(&x);
            for c in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[c] += step;
                xm[c] -= step;
                let fd = (p.value_at(&xp) - p.value_at(&xm)) / (2.0 * step);
                assert!((fd - g[c]).abs() <= 1e-6 * g[c].abs().max(1.0));
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let p = mixed_2d();
        let x = [0.31, 0.77];
        let h = p.hessian_at(&x);
        let step = 1e-6;
        for c in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += step;
            xm[c] -= step;
            let gp = p.gradient_at(&xp);
            let gm = p.gradient_at(&xm);
            for r in 0..2 {
                let fd = (gp[r] - gm[r]) / (2.0 * step);
                assert!((fd - h[r * 2 + c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn value_is_periodic() {
        let p = mixed_2d();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            for axis in 0..2 {
                let mut shifted = x;
                shifted[axis] += 1.0;
                let wrapped = canonicalize(&shifted).unwrap();
                assert!((p.value_at(&x) - p.eval(&wrapped).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn certified_max_examples() {
        let c = TrigPotential::cosine(1, 1.0);
        assert!((c.certified_max().value - 1.0).abs() < 1e-9);
        let z = TrigPotential::zero(2);
        assert_eq!(z.certified_max().value, 0.0);
        assert_eq!(z.certified_max().eps, 0.0);
    }

    #[test]
    fn certified_max_against_dense_scan() {
        let p = TrigPotential::new(1, vec![Mode::new(vec![1], 0.3, 0.0), Mode::new(vec![2], 0.0, 0.1)]).unwrap();
        let cert = p.certified_max();
        let brute = (0..1_000_000)
            .map(|i| p.value_at(&[i as f64 / 1e6]))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(cert.value >= brute - 1e-12);
        assert!(cert.value <= brute + cert.eps.max(1e-12));
        assert!(cert.upper() >= brute);
    }

    #[test]
    fn certified_max_dominates_samples() {
        let p = mixed_2d();
        let cert = p.certified_max().clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            assert!(p.value_at(&x) <= cert.value + 1e-12);
        }
        assert!(cert.grid_min <= cert.value);
    }

    #[test]
    fn rejects_bad_modes() {
        assert!(TrigPotential::new(1, vec![Mode::new(vec![0], 1.0, 0.5)]).is_err());
        assert!(TrigPotential::new(1, vec![Mode::new(vec![1, 0], 1.0, 0.0)]).is_err());
        assert!(TrigPotential::new(1, vec![Mode::new(vec![65], 1.0, 0.0)]).is_err());
        assert!(TrigPotential::new(1, vec![Mode::new(vec![1], f64::NAN, 0.0)]).is_err());
        assert!(TrigPotential::new(1, vec![Mode::new(vec![1], 1.0, 0.0), Mode::new(vec![1], 2.0, 0.0)]).is_err());
    }

    #[test]
    fn toml_format_is_readable() {
        let text = "dimension = 1\n\n[[modes]]\nk = [1]\na = 1.0\nb = 0.0\n";
        let p = TrigPotential::from_toml_str(text).unwrap();
        assert_eq!(p, TrigPotential::cosine(1, 1.0));
        let empty = TrigPotential::from_toml_str("dimension = 2\n").unwrap();
        assert!(empty.is_zero());
    }

    #[test]
    fn sinc_derivatives_agree_across_branches() {
        for &t in &[0.49999, 0.5, 0.500001] {
            let (a0, a1, a2) = sinc(t);
            let (sn, cs) = t.sin_cos();
            let e0 = sn / t;
            let e1 = (cs - e0) / t;
            let e2 = -e0 - 2.0 * e1 / t;
            assert!((a0 - e0).abs() < 1e-14 && (a1 - e1).abs() < 1e-13 && (a2 - e2).abs() < 1e-12);
        }
        let h = 1e-6;
        for &t in &[1e-4, 0.1, 0.3, 0.7, 2.0] {
            let fd1 = (sinc(t + h).0 - sinc(t - h).0) / (2.0 * h);
            let fd2 = (sinc(t + h).1 - sinc(t - h).1) / (2.0 * h);
            assert!((fd1 - sinc(t).1).abs() < 1e-8);
            assert!((fd2 - sinc(t).2).abs() < 1e-8);
        }
    }

    #[test]
    fn segment_mean_matches_fine_quadrature() {
        let p = mixed_2d();
        let u = [0.1, -0.3];
        let v = [0.9, 0.45];
        let m = 20_000;
        let mid: f64 = (0..m)
            .map(|i| {
                let s = (i as f64 + 0.5) / m as f64;
                p.value_at(&[u[0] + s * (v[0] - u[0]), u[1] + s * (v[1] - u[1])])
            })
            .sum::<f64>()
            / m as f64;
        assert!((p.segment_mean(&u, &v) - mid).abs() < 1e-8);
        // degenerate segment reduces to a point value
        assert!((p.segment_mean(&u, &u) - p.value_at(&u)).abs() < 1e-15);
    }

    #[test]
    fn segment_derivatives_match_finite_differences() {
        let p = mixed_2d();
        let base = [0.13, 0.4, 0.21, 0.52];
        let mut g = vec![0.0; 4];
        let mut h = vec![0.0; 16];
        let val = p.segment_mean_derivatives(&base[..2], &base[2..], &mut g, &mut h);
        assert!((val - p.segment_mean(&base[..2], &base[2..])).abs() < 1e-15);
        let step = 1e-6;
        let mut gp = vec![0.0; 4];
        let mut gm = vec![0.0; 4];
        let mut scratch = vec![0.0; 16];
        for c in 0..4 {
            let mut xp = base;
            let mut xm = base;
            xp[c] += step;
            xm[c] -= step;
            let fp = p.segment_mean_derivatives(&xp[..2], &xp[2..], &mut gp, &mut scratch);
            let fm = p.segment_mean_derivatives(&xm[..2], &xm[2..], &mut gm, &mut scratch);
            assert!(((fp - fm) / (2.0 * step) - g[c]).abs() < 1e-7);
            for r in 0..4 {
                assert!(((gp[r] - gm[r]) / (2.0 * step) - h[r * 4 + c]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_bit_exact(
            coeffs in prop::collection::vec((-3i64..=3, -3i64..=3, -1e3f64..1e3, -1e3f64..1e3), 0..6)
        ) {
            let mut modes = Vec::new();
            let mut seen = std::collections::BTreeSet::new();
            for (k1, k2, a, b) in coeffs {
                if !seen.insert((k1, k2)) { continue; }
                let b = if k1 == 0 && k2 == 0 { 0.0 } else { b };
                modes.push(Mode::new(vec![k1, k2], a, b));
            }
            let p = TrigPotential::new(2, modes).unwrap();
            let back = TrigPotential::from_toml_str(&p.to_toml_string()).unwrap();
            prop_assert_eq!(back.modes().len(), p.modes().len());
            for (m1, m2) in back.modes().iter().zip(p.modes()) {
                prop_assert_eq!(&m1.k, &m2.k);
                prop_assert_eq!(m1.a.to_bits(), m2.a.to_bits());
                prop_assert_eq!(m1.b.to_bits(), m2.b.to_bits());
            }
        }
    }
}
