//! Convex duality of the Dirichlet functional: lattice conjugates of F,
//! the biconjugate, and the dual momentum of a rotation vector.

use effham::dirichlet::{cal_e_value, dual_momentum, legendre_f, sample_f, solve_cell_problem, DensityField, SolverConfig};
use effham::legendre::{Lattice, SampledFunction};
use effham::potential::{Mode, TrigPotential};

fn main() -> effham::error::Result<()> {
    let series = TrigPotential::new(1, vec![Mode::new(vec![0], 1.0, 0.0), Mode::new(vec![1], 0.4, 0.1)])?;
    let rho = DensityField::from_trig(&series, 256)?;
    let p_lattice = Lattice::cube(1, -4.0, 4.0, 161)?;
    let f = sample_f(&rho, &p_lattice)?;

    let j_lattice = Lattice::cube(1, -3.0, 3.0, 121)?;
    let conj = SampledFunction::from_fn(j_lattice, |j| f.conjugate_at(j))?;
    for p in [-1.0, 0.3, 1.7] {
        let direct = solve_cell_problem(&rho, &[p], &SolverConfig::default())?.f_value;
        println!("P={p:>5}: F={direct:.10}  F**={:.10}", conj.conjugate_at(&[p])?);
    }

    let j = [0.8];
    let fstar = legendre_f(&rho, &j, &p_lattice)?;
    let p = dual_momentum(&rho, &j)?;
    let phi = solve_cell_problem(&rho, &p, &SolverConfig::default())?.phi;
    println!("J={}: F*={fstar:.10}, dual P={:.10}, E at corrector {:.10}", j[0], p[0], cal_e_value(&rho, &j, &phi)?);
    Ok(())
}
