//! Grid min-max upper bound against the 1-D quadrature oracle for the pendulum.

use effham::baselines::{minmax_h, oracle_1d};
use effham::potential::TrigPotential;

fn main() -> effham::error::Result<()> {
    let xi = TrigPotential::cosine(1, 1.0);
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(256);
    println!("{:>5} {:>12} {:>12} {:>9} {:>7}", "P", "H_upper", "oracle E", "rel err", "plateau");
    for i in 0..=12 {
        let p = 0.25 * i as f64;
        let mm = minmax_h(&xi, &[p], n)?;
        let or = oracle_1d(&xi, p)?;
        println!(
            "{p:>5.2} {:>12.8} {:>12.8} {:>9.2e} {:>7}",
            mm.h_upper,
            or.e,
            (mm.h_upper - or.e).abs() / or.e,
            or.plateau
        );
    }
    println!("P_c = {:.10} (4/pi = {:.10})", oracle_1d(&xi, 0.0)?.p_c, 4.0 / std::f64::consts::PI);
    Ok(())
}
