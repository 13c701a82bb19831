//! Periodic finite-volume solver for `div(rho (grad phi + P)) = 0` and the
//! quantities built on it: the Dirichlet value `F(rho, P)`, the rotation
//! vector, the dual functional `E` and the Legendre transform `F*`.
//!
//! Nodes sit at `x_k = k/N`; the forward difference `(phi_{k+e} - phi_k)/h`
//! lives on the face between `k` and `k+e`, where the density is the
//! harmonic mean of its two neighbours. In 1-D this keeps the flux exactly
//! constant and makes `mean(1/rho_face) = mean(1/rho)`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::legendre::{Lattice, SampledFunction};
use crate::potential::TrigPotential;

pub const DENSITY_FLOOR: f64 = 1e-8;

/// Values on the uniform periodic grid, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub dim: usize,
    pub size: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(dim: usize, size: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || size == 0 {
            return Err(Error::invalid("grid needs a positive dimension and size"));
        }
        let expected = size.checked_pow(dim as u32).ok_or_else(|| Error::invalid("grid too large"))?;
        if values.len() != expected {
            return Err(Error::invalid(format!("expected {expected} grid values, got {}", values.len())));
        }
        Ok(GridField { dim, size, values })
    }

    pub fn zeros(dim: usize, size: usize) -> Self {
        GridField {
            dim,
            size,
            values: vec![0.0; size.pow(dim as u32)],
        }
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(dim: usize, size: usize, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut g = GridField::zeros(dim, size);
        for idx in 0..g.len() {
            let x = g.node(idx);
            g.values[idx] = f(&x);
        }
        g
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.size as f64
    }

    pub fn node(&self, mut idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for d in (0..self.dim).rev() {
            x[d] = (idx % self.size) as f64 / self.size as f64;
            idx /= self.size;
        }
        x
    }

    fn stride(&self, axis: usize) -> usize {
        self.size.pow((self.dim - 1 - axis) as u32)
    }

    /// Index of the neighbour of `idx` one step forward along `axis`.
    #[inline]
    pub(crate) fn forward(&self, idx: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let coord = (idx / s) % self.size;
        if coord + 1 == self.size {
            idx + s - self.size * s
        } else {
            idx + s
        }
    }

    #[inline]
    pub(crate) fn backward(&self, idx: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let coord = (idx / s) % self.size;
        if coord == 0 {
            idx + self.size * s - s
        } else {
            idx - s
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Forward difference along `axis`, one value per face.
    pub fn forward_difference(&self, axis: usize) -> Vec<f64> {
        let inv_h = self.size as f64;
        (0..self.len())
            .map(|k| (self.values[self.forward(k, axis)] - self.values[k]) * inv_h)
            .collect()
    }

    fn remove_mean(&mut self) {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
    }
}

/// A probability density on the grid, floored at [`DENSITY_FLOOR`] and
/// normalized to mean one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    field: GridField,
    floor: f64,
}

impl DensityField {
    pub fn new(field: GridField) -> Result<Self> {
        if let Some(bad) = field.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("density values must be finite and nonnegative, found {bad}")));
        }
        let mut field = field;
        let floor = DENSITY_FLOOR;
        for _ in 0..2 {
            let mean = field.mean();
            if !(mean > 0.0) {
                return Err(Error::invalid("density has zero mass"));
            }
            field.values.iter_mut().for_each(|v| *v = (*v / mean).max(floor));
        }
        let mean = field.mean();
        field.values.iter_mut().for_each(|v| *v /= mean);
        Ok(DensityField { field, floor })
    }

    pub fn uniform(dim: usize, size: usize) -> Self {
        DensityField {
            field: GridField {
                dim,
                size,
                values: vec![1.0; size.pow(dim as u32)],
            },
            floor: DENSITY_FLOOR,
        }
    }

    /// Samples a trigonometric series at the nodes. The series must be
    /// strictly positive there; it is then normalized.
    pub fn from_trig(series: &TrigPotential, size: usize) -> Result<Self> {
        let field = GridField::from_fn(series.dim(), size, |x| series.value_at(x));
        if let Some(bad) = field.values.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::invalid(format!("trigonometric density is not positive on the grid (value {bad})")));
        }
        DensityField::new(field)
    }

    /// Raw grid file: `N`, then `N^n` reals in row-major order; `n` is
    /// inferred from the count.
    pub fn from_raw_str(s: &str) -> Result<Self> {
        let mut tokens = s.split_whitespace();
        let size: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("empty density file".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("grid size: {e}")))?;
        let values: Vec<f64> = tokens
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("density value '{t}': {e}"))))
            .collect::<Result<_>>()?;
        if size < 2 {
            return Err(Error::Parse("grid size must be at least 2".into()));
        }
        let dim = (1..=3)
            .find(|&d| size.checked_pow(d as u32) == Some(values.len()))
            .ok_or_else(|| Error::Parse(format!("{} values is not N^n for N = {size}", values.len())))?;
        DensityField::new(GridField::new(dim, size, values)?)
    }

    pub fn read_raw(path: impl AsRef<Path>) -> Result<Self> {
        DensityField::from_raw_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_raw_string(&self) -> String {
        let mut out = format!("{}\n", self.field.size);
        for v in &self.field.values {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        &self.field.values
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn size(&self) -> usize {
        self.field.size
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Convex combination `lambda self + (1 - lambda) other`.
    pub fn mix(&self, other: &DensityField, lambda: f64) -> Result<Self> {
        if self.dim() != other.dim() || self.size() != other.size() {
            return Err(Error::invalid("densities live on different grids"));
        }
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        DensityField::new(GridField::new(self.dim(), self.size(), values)?)
    }

    /// Harmonic mean of the two nodes adjacent to each forward face.
    pub fn face_densities(&self, axis: usize) -> Vec<f64> {
        let f = &self.field;
        (0..f.len())
            .map(|k| {
                let (a, b) = (f.values[k], f.values[f.forward(k, axis)]);
                2.0 * a * b / (a + b)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: 1e-12,
            max_iter: 20_000,
        }
    }
}

/// The solved corrector with the derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticSolution {
    pub p: Vec<f64>,
    /// Zero-mean corrector.
    pub phi: GridField,
    pub f_value: f64,
    /// Rotation vector `mean rho_face (D phi + P)`.
    pub rotation: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

struct Operator {
    grid: GridField,
    faces: Vec<Vec<f64>>,
    diag: Vec<f64>,
}

impl Operator {
    fn new(rho: &DensityField) -> Self {
        let grid = GridField::zeros(rho.dim(), rho.size());
        let faces: Vec<Vec<f64>> = (0..rho.dim()).map(|d| rho.face_densities(d)).collect();
        let diag = (0..grid.len())
            .map(|k| {
                (0..grid.dim)
                    .map(|d| faces[d][k] + faces[d][grid.backward(k, d)])
                    .sum()
            })
            .collect();
        Operator { grid, faces, diag }
    }

    /// `h^2 div_h(rho D phi)` with the sign making it positive semidefinite.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let mut s = 0.0;
            for d in 0..g.dim {
                let (f, b) = (g.forward(k, d), g.backward(k, d));
                s += self.faces[d][k] * (x[k] - x[f]) + self.faces[d][b] * (x[k] - x[b]);
            }
            *o = s;
        });
    }

    fn rhs(&self, p: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let h = g.spacing();
        (0..g.len())
            .map(|k| {
                (0..g.dim)
                    .map(|d| h * p[d] * (self.faces[d][k] - self.faces[d][g.backward(k, d)]))
                    .sum()
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_zero_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Jacobi-preconditioned CG on the zero-mean subspace.
fn conjugate_gradient(op: &Operator, b: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    project_zero_mean(&mut r);
    let bnorm = dot(&r, &r).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let precondition = |r: &[f64]| -> Vec<f64> {
        let mut z: Vec<f64> = r.iter().zip(&op.diag).map(|(a, d)| a / d).collect();
        project_zero_mean(&mut z);
        z
    };
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=cfg.max_iter {
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel < cfg.rel_tol {
            project_zero_mean(&mut x);
            return Ok((x, it, rel));
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    let rel = dot(&r, &r).sqrt() / bnorm;
    Err(Error::SolverFailure {
        iterations: cfg.max_iter,
        residual: rel,
    })
}

fn check_density(rho: &DensityField, p: &[f64]) -> Result<()> {
    check_dim(rho.dim(), p.len())?;
    if !(1..=2).contains(&rho.dim()) {
        return Err(Error::invalid(format!("the grid solver supports n = 1, 2 (got {})", rho.dim())));
    }
    if p.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite momentum"));
    }
    Ok(())
}

/// Solves the cell problem and evaluates `F` and the rotation vector.
pub fn solve_cell_problem(rho: &DensityField, p: &[f64], cfg: &SolverConfig) -> Result<EllipticSolution> {
    check_density(rho, p)?;
    let op = Operator::new(rho);
    let b = op.rhs(p);
    let (x, iterations, residual) = conjugate_gradient(&op, &b, cfg)?;
    let phi = GridField {
        dim: rho.dim(),
        size: rho.size(),
        values: x,
    };
    let cells = phi.len() as f64;
    let mut energy = 0.0;
    let mut rotation = vec![0.0; rho.dim()];
    for d in 0..rho.dim() {
        let grad = phi.forward_difference(d);
        for k in 0..phi.len() {
            let flux_velocity = grad[k] + p[d];
            energy += op.faces[d][k] * flux_velocity * flux_velocity;
            rotation[d] += op.faces[d][k] * flux_velocity;
        }
        rotation[d] /= cells;
    }
    Ok(EllipticSolution {
        p: p.to_vec(),
        phi,
        f_value: 0.5 * energy / cells,
        rotation,
        iterations,
        residual,
    })
}

/// Zero-mean corrector `phi` solving `div(rho (grad phi + P)) = 0`.
pub fn solve_elliptic(rho: &DensityField, p: &[f64]) -> Result<GridField> {
    let mut phi = solve_cell_problem(rho, p, &SolverConfig::default())?.phi;
    phi.remove_mean();
    Ok(phi)
}

/// `F(rho, P) = 1/2 min_phi mean rho_face |D phi + P|^2`.
pub fn f_value(rho: &DensityField, p: &[f64]) -> Result<f64> {
    Ok(solve_cell_problem(rho, p, &SolverConfig::default())?.f_value)
}

/// `J = mean rho_face (D phi + P)`, which equals `dF/dP`.
pub fn rotation_vector(rho: &DensityField, p: &[f64]) -> Result<Vec<f64>> {
    Ok(solve_cell_problem(rho, p, &SolverConfig::default())?.rotation)
}

/// Max-norm of the discrete divergence of `rho_face (D phi + P)`.
pub fn divergence_residual(rho: &DensityField, phi: &GridField, p: &[f64]) -> Result<f64> {
    check_density(rho, p)?;
    let g = &rho.field;
    let inv_h = rho.size() as f64;
    let fluxes: Vec<Vec<f64>> = (0..rho.dim())
        .map(|d| {
            let faces = rho.face_densities(d);
            phi.forward_difference(d).iter().zip(&faces).map(|(dp, f)| f * (dp + p[d])).collect()
        })
        .collect();
    Ok((0..g.len())
        .map(|k| {
            (0..g.dim)
                .map(|d| (fluxes[d][k] - fluxes[d][g.backward(k, d)]) * inv_h)
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max))
}

/// `E(rho, J, phi) = 1/2 (|J - int grad phi drho|^2 - int |grad phi|^2 drho)`
/// with the face densities as the quadrature weights. For every `phi`,
/// `E <= F*(rho, J)` up to discretization; at the corrector solved for the
/// momentum dual to `J` the two agree up to `1/2 sum_d (m_d^2 - m_d) P_d^2`,
/// `m_d` being the mean face density (`1 - O(h^2)`).
pub fn cal_e_value(rho: &DensityField, j: &[f64], phi: &GridField) -> Result<f64> {
    check_dim(rho.dim(), j.len())?;
    if phi.dim != rho.dim() || phi.size != rho.size() {
        return Err(Error::invalid("corrector and density live on different grids"));
    }
    let cells = phi.len() as f64;
    let mut drift = 0.0;
    let mut dirichlet = 0.0;
    for d in 0..rho.dim() {
        let faces = rho.face_densities(d);
        let grad = phi.forward_difference(d);
        let mean_grad = grad.iter().zip(&faces).map(|(g, f)| g * f).sum::<f64>() / cells;
        drift += (j[d] - mean_grad).powi(2);
        dirichlet += grad.iter().zip(&faces).map(|(g, f)| f * g * g).sum::<f64>() / cells;
    }
    Ok(0.5 * (drift - dirichlet))
}

/// `F(rho, .)` sampled on a lattice of momenta (solves run in parallel).
pub fn sample_f(rho: &DensityField, lattice: &Lattice) -> Result<SampledFunction> {
    check_dim(rho.dim(), lattice.dim())?;
    let values = lattice
        .nodes()
        .par_iter()
        .map(|p| f_value(rho, p))
        .collect::<Result<Vec<_>>>()?;
    SampledFunction::new(lattice.clone(), values)
}

/// `F*(rho, J) = sup_P [P.J - F(rho, P)]` over the lattice, quadratically
/// refined around the best node.
pub fn legendre_f(rho: &DensityField, j: &[f64], lattice: &Lattice) -> Result<f64> {
    sample_f(rho, lattice)?.conjugate_at(j)
}

/// The homogenized matrix `K` with `F(rho, P) = P.K P / 2` and `J = K P`,
/// assembled from one solve per axis.
pub fn effective_conductivity(rho: &DensityField) -> Result<Vec<f64>> {
    let n = rho.dim();
    let mut k = vec![0.0; n * n];
    for d in 0..n {
        let mut e = vec![0.0; n];
        e[d] = 1.0;
        let j = rotation_vector(rho, &e)?;
        for r in 0..n {
            k[r * n + d] = j[r];
        }
    }
    Ok(k)
}

/// Momentum `P` with `J(rho, P) = j`.
pub fn dual_momentum(rho: &DensityField, j: &[f64]) -> Result<Vec<f64>> {
    check_dim(rho.dim(), j.len())?;
    let n = rho.dim();
    let mut k = effective_conductivity(rho)?;
    // symmetrize away solver round-off before factoring
    for r in 0..n {
        for c in 0..r {
            let avg = 0.5 * (k[r * n + c] + k[c * n + r]);
            k[r * n + c] = avg;
            k[c * n + r] = avg;
        }
    }
    if !crate::linalg::cholesky(&mut k, n) {
        return Err(Error::invalid("effective conductivity is not positive definite"));
    }
    let mut p = j.to_vec();
    crate::linalg::cholesky_solve(&k, n, &mut p);
    Ok(p)
}

/// `1/2 |P|^2 (int 1/rho)^{-1}`, the 1-D closed form, with the integral
/// taken over the grid values.
pub fn harmonic_mean_formula(rho: &DensityField, p: f64) -> f64 {
    let inv: f64 = rho.values().iter().map(|v| 1.0 / v).sum::<f64>() / rho.values().len() as f64;
    0.5 * p * p / inv
}
