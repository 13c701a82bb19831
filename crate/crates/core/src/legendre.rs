//! Numerical convex conjugates from values sampled on a bounded lattice.
//!
//! `f*(y) = sup_x [x.y - f(x)]` is taken as the lattice maximum, refined by a
//! local quadratic fit around the best node. A maximizer on the lattice
//! boundary means the lattice does not cover the supremum and is an error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Axis-aligned lattice with `counts[d]` equispaced nodes on
/// `[lower[d], upper[d]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Lattice {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let n = lower.len();
        if n == 0 || upper.len() != n || counts.len() != n {
            return Err(Error::invalid("lattice bounds and counts must share one nonzero length"));
        }
        for d in 0..n {
            if !(lower[d] < upper[d]) || !lower[d].is_finite() || !upper[d].is_finite() {
                return Err(Error::invalid(format!("bad lattice range [{}, {}]", lower[d], upper[d])));
            }
            if counts[d] < 3 {
                return Err(Error::invalid("lattice needs at least 3 nodes per axis"));
            }
        }
        Ok(Lattice { lower, upper, counts })
    }

    /// Same range and count on every axis.
    pub fn cube(dim: usize, lower: f64, upper: f64, count: usize) -> Result<Self> {
        Lattice::new(vec![lower; dim], vec![upper; dim], vec![count; dim])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.upper[d] - self.lower[d]) / (self.counts[d] - 1) as f64
    }

    /// Multi-index of flat node `idx`, last axis fastest.
    pub fn index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            out[d] = idx % self.counts[d];
            idx /= self.counts[d];
        }
        out
    }

    pub fn flat(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.counts).fold(0, |acc, (i, c)| acc * c + i)
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.index(idx)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.lower[d] + i as f64 * self.spacing(d))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }
}

/// A function sampled on every node of a [`Lattice`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::invalid(format!(
                "expected {} samples, got {}",
                lattice.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        Ok(SampledFunction { lattice, values })
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Self> {
        let values = lattice.nodes().iter().map(|x| f(x)).collect::<Result<Vec<_>>>()?;
        SampledFunction::new(lattice, values)
    }

    /// `sup_x [x.y - f(x)]` with the maximizer required to be interior.
    pub fn conjugate_at(&self, y: &[f64]) -> Result<f64> {
        Ok(self.conjugate_with_argmax(y)?.0)
    }

    /// Conjugate value together with the refined maximizer.
    pub fn conjugate_with_argmax(&self, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lat = &self.lattice;
        let n = lat.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        let objective = |idx: usize| {
            let x = lat.node(idx);
            x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() - self.values[idx]
        };
        let (best, best_val) = (0..lat.len())
            .map(|i| (i, objective(i)))
            .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        let index = lat.index(best);
        if index.iter().zip(&lat.counts).any(|(&i, &c)| i == 0 || i + 1 == c) {
            return Err(Error::GridTooSmall { at: lat.node(best) });
        }
        let centre = lat.node(best);
        // samples of the objective on the 3^n stencil around the best node
        let offsets: Vec<Vec<i64>> = stencil(n);
        let samples: Vec<(Vec<f64>, f64)> = offsets
            .iter()
            .map(|o| {
                let idx: Vec<usize> = index.iter().zip(o).map(|(&i, &d)| (i as i64 + d) as usize).collect();
                let rel: Vec<f64> = o.iter().map(|&d| d as f64).collect();
                (rel, objective(lat.flat(&idx)))
            })
            .collect();
        let h: Vec<f64> = (0..n).map(|d| lat.spacing(d)).collect();
        match refine(&samples, n) {
            Some((value, step)) if value >= best_val => {
                let arg = centre.iter().zip(&step).zip(&h).map(|((c, s), hd)| c + s * hd).collect();
                Ok((value, arg))
            }
            _ => Ok((best_val, centre)),
        }
    }
}

fn stencil(n: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (-1..=1).map(move |d| {
                    let mut w = v.clone();
                    w.push(d);
                    w
                })
            })
            .collect();
    }
    out
}

/// Least-squares quadratic through the stencil samples (coordinates in
/// units of the spacing); returns the stationary value and offset when the
/// fit is strictly concave and its maximizer stays within one cell.
fn refine(samples: &[(Vec<f64>, f64)], n: usize) -> Option<(f64, Vec<f64>)> {
    // basis: 1, x_d, x_a x_b (a <= b)
    let mut quad = Vec::new();
    for a in 0..n {
        for b in a..n {
            quad.push((a, b));
        }
    }
    let nb = 1 + n + quad.len();
    let basis = |x: &[f64]| {
        let mut v = Vec::with_capacity(nb);
        v.push(1.0);
        v.extend_from_slice(x);
        v.extend(quad.iter().map(|&(a, b)| x[a] * x[b]));
        v
    };
    let mut ata = vec![0.0; nb * nb];
    let mut atb = vec![0.0; nb];
    for (x, f) in samples {
        let phi = basis(x);
        for r in 0..nb {
            atb[r] += phi[r] * f;
            for c in 0..nb {
                ata[r * nb + c] += phi[r] * phi[c];
            }
        }
    }
    if !linalg::cholesky(&mut ata, nb) {
        return None;
    }
    linalg::cholesky_solve(&ata, nb, &mut atb);
    let coef = atb;
    // f ~ c0 + g.x + x.Qx/2 ... build Hessian H with f = c0 + g.x + 1/2 x H x
    let g = &coef[1..=n];
    let mut hess = vec![0.0; n * n];
    for (k, &(a, b)) in quad.iter().enumerate() {
        let c = coef[1 + n + k];
        if a == b {
            hess[a * n + a] = 2.0 * c;
        } else {
            hess[a * n + b] = c;
            hess[b * n + a] = c;
        }
    }
    // maximizer solves (-H) x = g with -H positive definite
    let mut neg: Vec<f64> = hess.iter().map(|v| -v).collect();
    if !linalg::cholesky(&mut neg, n) {
        return None;
    }
    let mut x = g.to_vec();
    linalg::cholesky_solve(&neg, n, &mut x);
    if x.iter().any(|v| v.abs() > 1.0) {
        return None;
    }
    let gx: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
    Some((coef[0] + 0.5 * gx, x))
}
