//! Minimal-action paths between two torus points, with and without a potential.

use effham::action::{action_refined, action_zero_potential, lift_window, ActionConfig, ActionQuery};
use effham::potential::TrigPotential;
use effham::torus::canonicalize;

fn main() -> effham::error::Result<()> {
    let y = canonicalize(&[0.1])?;
    let x = canonicalize(&[0.85])?;
    let xi = TrigPotential::cosine(1, 1.0);
    for t in [0.2, 0.5, 1.0] {
        let q = ActionQuery::new(y.clone(), x.clone(), t, vec![1.5])?;
        let free = action_zero_potential(&q);
        let (sol, gap) = action_refined(&q, &xi, &ActionConfig::default())?;
        println!(
            "T={t:<4} lifts={:?}  free A={free:.6}  A={:.8} (lift {:?}, M={}, gap {gap:.1e})",
            lift_window(&q, &xi),
            sol.action_value,
            sol.lift,
            sol.segments()
        );
        // coarse path profile
        let m = sol.segments();
        let nodes: Vec<String> = (0..=4).map(|i| format!("{:.3}", sol.node(i * m / 4)[0])).collect();
        println!("          path {}", nodes.join(" -> "));
    }
    Ok(())
}
