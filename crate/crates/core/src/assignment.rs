//! Exact linear assignment and the empirical transport values built on it.
//!
//! For an empirical measure with `j` equal atoms the optimal self-transport
//! problem under the action cost reduces to a minimum over permutations.
//! Values are normalized by `1/j` so that they are comparable with the
//! probability-measure formulation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{action_general_with, ActionConfig, ActionQuery, PathSolution};
use crate::error::{Error, Result};
use crate::potential::TrigPotential;
use crate::torus::TorusPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(size: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("cost matrix must be at least 1x1"));
        }
        if entries.len() != size * size {
            return Err(Error::invalid(format!(
                "expected {} entries for a {size}x{size} matrix, got {}",
                size * size,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().position(|e| !e.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite cost at ({}, {})",
                bad / size,
                bad % size
            )));
        }
        Ok(CostMatrix { size, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::invalid("cost matrix must be square"));
        }
        CostMatrix::new(size, rows.concat())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.entries[i * self.size + l]
    }

    pub fn set(&mut self, i: usize, l: usize, value: f64) {
        self.entries[i * self.size + l] = value;
    }

    /// `(1/j) sum_i C[i][perm[i]]`, summed in row order.
    pub fn normalized_cost(&self, perm: &[usize]) -> f64 {
        self.raw_cost(perm) / self.size as f64
    }

    pub fn raw_cost(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &l)| self.get(i, l)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `perm[i]` is the atom that atom `i` is sent to.
    pub perm: Vec<usize>,
    pub value: f64,
}

impl TransportPlan {
    pub fn identity(size: usize, cost: &CostMatrix) -> Self {
        let perm: Vec<usize> = (0..size).collect();
        TransportPlan {
            value: cost.normalized_cost(&perm),
            perm,
        }
    }

    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (i, &l) in self.perm.iter().enumerate() {
            inv[l] = i;
        }
        inv
    }
}

/// Minimum-cost perfect matching by shortest augmenting paths with
/// potentials (Hungarian method), `O(j^3)`.
pub fn solve_assignment(cost: &CostMatrix) -> TransportPlan {
    let n = cost.size();
    let inf = f64::INFINITY;
    // 1-based arrays; column 0 is the virtual root of each augmentation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|m| *m = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    TransportPlan {
        value: cost.normalized_cost(&perm),
        perm,
    }
}

/// All pairwise action solutions `A(x_i, x_l, T)`, row-major.
pub fn action_table(
    points: &[TorusPoint],
    xi: &TrigPotential,
    t: f64,
    p: &[f64],
    cfg: &ActionConfig,
) -> Result<Vec<PathSolution>> {
    let j = points.len();
    (0..j * j)
        .into_par_iter()
        .map(|idx| {
            let q = ActionQuery::new(points[idx / j].clone(), points[idx % j].clone(), t, p.to_vec())?;
            action_general_with(&q, xi, cfg)
        })
        .collect()
}

pub fn cost_matrix(
    points: &[TorusPoint],
    xi: &TrigPotential,
    t: f64,
    p: &[f64],
    cfg: &ActionConfig,
) -> Result<CostMatrix> {
    if points.is_empty() {
        return Err(Error::invalid("need at least one atom"));
    }
    let table = action_table(points, xi, t, p, cfg)?;
    CostMatrix::new(points.len(), table.iter().map(|s| s.action_value).collect())
}

/// `D^T_P(mu_j, Xi)` for the uniform empirical measure on `points`.
pub fn empirical_d(
    points: &[TorusPoint],
    xi: &TrigPotential,
    t: f64,
    p: &[f64],
    cfg: &ActionConfig,
) -> Result<TransportPlan> {
    let cost = cost_matrix(points, xi, t, p, cfg)?;
    Ok(solve_assignment(&cost))
}

/// `H_{Xi,T}(mu_j, P) = |P|^2/2 - D^T_P(mu_j, Xi)`.
pub fn empirical_h(
    points: &[TorusPoint],
    xi: &TrigPotential,
    t: f64,
    p: &[f64],
    cfg: &ActionConfig,
) -> Result<f64> {
    let plan = empirical_d(points, xi, t, p, cfg)?;
    Ok(0.5 * p.iter().map(|c| c * c).sum::<f64>() - plan.value)
}
