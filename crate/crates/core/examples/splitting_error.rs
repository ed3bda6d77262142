//! Operator-norm error of the Lie-Trotter propagator for the time-periodic
//! splitting test operator against a fine unsplit reference.

use kpp_ips::harness::loglog_slope;
use kpp_ips::spectral::{splitting_errors, SplittingTestProblem};
use kpp_ips::Result;

fn main() -> Result<()> {
    let h = std::env::args().nth(1).map_or(8, |a| a.parse().expect("H"));
    let gen = SplittingTestProblem::new(h)?;
    let dts: Vec<f64> = (1..=6).map(|k| 0.5f64.powi(k)).collect();
    let errors = splitting_errors(&gen, &dts, 1.0 / 512.0, 1.0)?;
    for (dt, e) in &errors {
        println!("dt = {dt:<10} error = {e:.4e}");
    }
    let (d, e): (Vec<f64>, Vec<f64>) = errors.into_iter().unzip();
    println!("slope = {:.3}", loglog_slope(&d, &e)?.0);
    Ok(())
}
