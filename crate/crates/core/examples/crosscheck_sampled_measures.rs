//! Empirical H of sampled measures converging to int Xi drho + F(rho, P)
//! as j grows and T shrinks, next to the atomic limit taken at fixed j.

use effham::action::ActionConfig;
use effham::assignment::empirical_h;
use effham::dirichlet::{f_value, DensityField};
use effham::potential::{Mode, TrigPotential};
use effham::sampling::{potential_mean, sample_density, SamplingScheme};

fn main() -> effham::error::Result<()> {
    let rho = TrigPotential::new(1, vec![Mode::new(vec![0], 1.0, 0.0), Mode::new(vec![1], 0.5, 0.0)])?;
    let xi = TrigPotential::cosine(1, 0.2);
    let p = [1.0];
    let reference = potential_mean(&xi, &rho, 64)? + f_value(&DensityField::from_trig(&rho, 1024)?, &p)?;
    println!("reference int Xi drho + F = {reference:.8}");
    for (j, t) in [(64, 0.2), (128, 0.1), (256, 0.05)] {
        let mut errs = Vec::new();
        for seed in 0..3 {
            let pts = sample_density(&rho, j, seed, SamplingScheme::Stratified)?;
            let h = empirical_h(&pts, &xi, t, &p, &ActionConfig::default())?;
            errs.push((h - reference).abs());
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        println!("j={j:<4} T={t:<5} mean |H_j - reference| = {mean:.2e}");
    }
    Ok(())
}
