//! Seeded point samples from trigonometric densities on the torus.
//!
//! In 1-D the closed-form CDF is inverted numerically. Stratified uniforms
//! `(i + U_i) / j` are the default there; they remove most of the `j^{-1/2}`
//! sampling noise from convergence studies. In 2-D points come from
//! rejection against a certified upper bound.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{Mode, TrigPotential};
use crate::torus::{canonicalize, TorusPoint};

/// Proposals allowed per requested point before rejection gives up.
pub const REJECTION_BUDGET: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingScheme {
    #[default]
    Stratified,
    Iid,
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingScheme::Stratified => "stratified",
            SamplingScheme::Iid => "iid",
        })
    }
}

impl FromStr for SamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stratified" => Ok(SamplingScheme::Stratified),
            "iid" => Ok(SamplingScheme::Iid),
            other => Err(Error::Parse(format!("unknown sampling scheme '{other}' (stratified, iid)"))),
        }
    }
}

/// Human-readable form of a series, used in error messages.
pub fn describe(rho: &TrigPotential) -> String {
    if rho.is_zero() {
        return "0".into();
    }
    let mut parts = Vec::new();
    for m in rho.modes() {
        if m.k.iter().all(|&c| c == 0) {
            parts.push(format!("{}", m.a));
            continue;
        }
        if m.a != 0.0 {
            parts.push(format!("{} cos{:?}", m.a, m.k));
        }
        if m.b != 0.0 {
            parts.push(format!("{} sin{:?}", m.b, m.k));
        }
    }
    parts.join(" + ")
}

fn mass(rho: &TrigPotential) -> f64 {
    rho.modes().iter().filter(|m| m.k.iter().all(|&c| c == 0)).map(|m| m.a).sum()
}

/// Lower bound on `min rho`, from the certified maximum of `-rho`.
fn lower_bound(rho: &TrigPotential) -> f64 {
    let neg = TrigPotential::new(
        rho.dim(),
        rho.modes().iter().map(|m| Mode::new(m.k.clone(), -m.a, -m.b)).collect(),
    )
    .expect("negation keeps a valid series");
    -neg.certified_max().upper()
}

/// Checks that `rho` can be sampled: positive everywhere, so it is a density
/// after dividing by its mean.
fn validate(rho: &TrigPotential) -> Result<()> {
    if !(mass(rho) > 0.0) {
        return Err(Error::invalid(format!("density '{}' has nonpositive mass", describe(rho))));
    }
    if !(lower_bound(rho) > 0.0) {
        return Err(Error::invalid(format!("density '{}' is not certified positive", describe(rho))));
    }
    Ok(())
}

/// `int_0^x rho / int_0^1 rho` for a 1-D series.
pub fn cdf_1d(rho: &TrigPotential, x: f64) -> f64 {
    let mut acc = 0.0;
    for m in rho.modes() {
        let k = m.k[0] as f64;
        if k == 0.0 {
            acc += m.a * x;
        } else {
            let w = 2.0 * PI * k;
            acc += m.a * (w * x).sin() / w + m.b * (1.0 - (w * x).cos()) / w;
        }
    }
    acc / mass(rho)
}

/// Solves `cdf(x) = u` on `[0, 1]` by safeguarded Newton.
fn invert_cdf(rho: &TrigPotential, total: f64, u: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut x = u;
    for _ in 0..100 {
        let g = cdf_1d(rho, x) - u;
        if g.abs() < 1e-15 {
            break;
        }
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let next = x - g * total / rho.value_at(&[x]);
        x = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 {
            break;
        }
    }
    x
}

/// `j` points distributed like `rho`, reproducible from `seed`.
pub fn sample_density(rho: &TrigPotential, j: usize, seed: u64, scheme: SamplingScheme) -> Result<Vec<TorusPoint>> {
    if j == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    validate(rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match rho.dim() {
        1 => {
            let total = mass(rho);
            (0..j)
                .map(|i| {
                    let v: f64 = rng.random();
                    let u = match scheme {
                        SamplingScheme::Stratified => (i as f64 + v) / j as f64,
                        SamplingScheme::Iid => v,
                    };
                    canonicalize(&[invert_cdf(rho, total, u)])
                })
                .collect()
        }
        2 => {
            let bound = rho.certified_max().upper();
            let budget = REJECTION_BUDGET * j;
            let mut out = Vec::with_capacity(j);
            let mut attempts = 0;
            while out.len() < j {
                if attempts == budget {
                    return Err(Error::Sampling {
                        density: describe(rho),
                        attempts,
                    });
                }
                attempts += 1;
                let x = [rng.random::<f64>(), rng.random::<f64>()];
                if rng.random::<f64>() * bound < rho.value_at(&x) {
                    out.push(canonicalize(&x)?);
                }
            }
            Ok(out)
        }
        n => Err(Error::invalid(format!("sampling supports n = 1, 2, got {n}"))),
    }
}

/// `int Xi rho / int rho` on an `N^n` midpoint grid, exact for trigonometric
/// products once `N` exceeds the combined bandwidth.
pub fn potential_mean(xi: &TrigPotential, rho: &TrigPotential, size: usize) -> Result<f64> {
    if xi.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: xi.dim(),
        });
    }
    let dim = rho.dim();
    let cells = size.pow(dim as u32);
    let (mut num, mut den) = (0.0, 0.0);
    let mut x = vec![0.0; dim];
    for idx in 0..cells {
        let mut rest = idx;
        for c in x.iter_mut() {
            *c = ((rest % size) as f64 + 0.5) / size as f64;
            rest /= size;
        }
        let r = rho.value_at(&x);
        num += xi.value_at(&x) * r;
        den += r;
    }
    Ok(num / den)
}
