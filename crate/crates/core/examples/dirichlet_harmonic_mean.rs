//! Cell problem on a periodic grid. In 1-D F(rho, P) is the harmonic-mean
//! formula; in 2-D the effective conductivity is a full matrix.

use effham::dirichlet::{
    divergence_residual, effective_conductivity, harmonic_mean_formula, solve_cell_problem, DensityField, SolverConfig,
};
use effham::potential::{Mode, TrigPotential};

fn main() -> effham::error::Result<()> {
    let series = TrigPotential::new(1, vec![Mode::new(vec![0], 1.0, 0.0), Mode::new(vec![1], 0.5, 0.0)])?;
    let rho = DensityField::from_trig(&series, 1024)?;
    for p in [0.5, 1.0, 2.0] {
        let sol = solve_cell_problem(&rho, &[p], &SolverConfig::default())?;
        println!(
            "P={p}: F={:.12} closed form {:.12}  J={:.10}  CG its {}  div {:.1e}",
            sol.f_value,
            harmonic_mean_formula(&rho, p),
            sol.rotation[0],
            sol.iterations,
            divergence_residual(&rho, &sol.phi, &[p])?
        );
    }

    let tilted = TrigPotential::new(2, vec![Mode::new(vec![0, 0], 1.0, 0.0), Mode::new(vec![1, 1], 0.6, 0.0)])?;
    let rho2 = DensityField::from_trig(&tilted, 64)?;
    let k = effective_conductivity(&rho2)?;
    println!("2-D conductivity [[{:.6}, {:.6}], [{:.6}, {:.6}]]", k[0], k[1], k[2], k[3]);
    Ok(())
}
