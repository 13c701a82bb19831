//! Geometry of the flat torus `R^n / Z^n`.
//!
//! Points are stored by their canonical representative in `[0, 1)^n`.
//! Displacements are the minimal-norm representative of a difference class,
//! with every component in `[-1/2, 1/2)`; an exact half always resolves to
//! `-1/2`, which makes the choice deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// The origin of `T^n`.
    pub fn origin(dim: usize) -> Self {
        TorusPoint {
            coords: vec![0.0; dim],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Moves the point by `delta` in the universal cover and re-canonicalizes.
    pub fn translated(&self, delta: &[f64]) -> Result<Self> {
        check_dim(self.dim(), delta.len())?;
        let moved: Vec<f64> = self.coords.iter().zip(delta).map(|(x, d)| x + d).collect();
        canonicalize(&moved)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusDisplacement {
    pub vector: Vec<f64>,
    pub norm: f64,
}

impl TorusDisplacement {
    fn from_vector(vector: Vec<f64>) -> Self {
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        TorusDisplacement { vector, norm }
    }

    pub fn norm_squared(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum()
    }
}

#[inline]
fn wrap_unit(v: f64) -> f64 {
    let r = v - v.floor();
    // v slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Integer nearest to `v`, with exact halves sent to the upper integer so
/// that `v - nearest_lift(v)` lies in `[-1/2, 1/2)`.
#[inline]
pub(crate) fn nearest_lift(v: f64) -> f64 {
    (v + 0.5).floor()
}

pub fn canonicalize(v: &[f64]) -> Result<TorusPoint> {
    if v.is_empty() {
        return Err(Error::invalid("torus points need at least one coordinate"));
    }
    if let Some(bad) = v.iter().find(|c| !c.is_finite()) {
        return Err(Error::invalid(format!("non-finite coordinate {bad}")));
    }
    Ok(TorusPoint {
        coords: v.iter().copied().map(wrap_unit).collect(),
    })
}

/// Minimal representative of `x - y - shift` modulo `Z^n`.
pub fn min_displacement(x: &TorusPoint, y: &TorusPoint, shift: &[f64]) -> Result<TorusDisplacement> {
    check_dim(x.dim(), y.dim())?;
    check_dim(x.dim(), shift.len())?;
    let vector = x
        .coords
        .iter()
        .zip(&y.coords)
        .zip(shift)
        .map(|((a, b), s)| {
            let v = a - b - s;
            v - nearest_lift(v)
        })
        .collect();
    Ok(TorusDisplacement::from_vector(vector))
}

/// The fractional part `{v}` as a minimal-norm displacement.
pub fn fractional_part(v: &[f64]) -> Result<TorusDisplacement> {
    let p = canonicalize(v)?;
    let origin = TorusPoint::origin(p.dim());
    let zero = vec![0.0; p.dim()];
    min_displacement(&p, &origin, &zero)
}
