use std::time::Instant;

use effham::potential::TrigPotential;
use effham::search::{effective_hamiltonian, SearchConfig};

fn main() -> effham::error::Result<()> {
    let xi = TrigPotential::cosine(1, 1.0);
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let p = args.first().copied().unwrap_or(2.0);
    let t = args.get(1).copied().unwrap_or(1.0);
    let cfg = SearchConfig { t, ..SearchConfig::default() };
    let start = Instant::now();
    let est = effective_hamiltonian(&xi, &[p], &[4, 8, 16, 32], &cfg)?;
    for l in &est.diagnostics.levels {
        println!("j={:>3}  D={:.6}  H={:.6}  noise={:.2e}", l.j, l.d_value, 0.5 * p * p - l.d_value, l.noise);
    }
    println!("H({p}) ~ {:.6} after {:.1?}", est.h_value, start.elapsed());
    Ok(())
}
