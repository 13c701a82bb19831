//! Exact assignment on empirical measures: a single atom reproduces the
//! closed form `|P|^2/2 - |{T P}|^2 / (2 T^2)`, and more atoms can only lower D.

use effham::action::ActionConfig;
use effham::assignment::{empirical_d, empirical_h, solve_assignment, CostMatrix};
use effham::potential::TrigPotential;
use effham::torus::canonicalize;

fn main() -> effham::error::Result<()> {
    let cost = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]])?;
    let plan = solve_assignment(&cost);
    println!("3x3 assignment: perm {:?}, normalized value {:.4}", plan.perm, plan.value);

    let zero = TrigPotential::zero(1);
    let cfg = ActionConfig::default();
    let (p, t) = (0.7, 1.3);
    let frac = {
        let v = t * p;
        v - (v + 0.5f64).floor()
    };
    let h = empirical_h(&[canonicalize(&[0.3])?], &zero, t, &[p], &cfg)?;
    println!("one atom: H = {h:.12}, closed form {:.12}", 0.5 * p * p - frac * frac / (2.0 * t * t));

    let xi = TrigPotential::cosine(1, 1.0);
    for j in [1, 2, 4, 8] {
        let pts = (0..j).map(|i| canonicalize(&[i as f64 / j as f64])).collect::<Result<Vec<_>, _>>()?;
        let plan = empirical_d(&pts, &xi, 1.0, &[2.0], &cfg)?;
        println!("lattice j={j}: D = {:.6}, H = {:.6}, perm {:?}", plan.value, 2.0 - plan.value, plan.perm);
    }
    Ok(())
}
