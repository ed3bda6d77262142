//! Eigenvalue error against the time step for the unsteady cellular flow,
//! with the time-discrete Galerkin scheme (fast) or particles (`ips`).

use kpp_ips::harness::{convergence_study, loglog_slope, Backend, Reference, RunConfig};
use kpp_ips::{FlowKind, FlowSpec, Result};

fn main() -> Result<()> {
    let mut cfg = RunConfig::for_flow(FlowSpec::new(FlowKind::UnsteadyCellular2D, 1.0).with_delta(0.5));
    cfg.lambda = Some(0.57);
    cfg.period = Some(1.0);
    cfg.dt_list = Some((1..=5).map(|k| 0.5f64.powi(k)).collect());
    cfg.reference = Some(Reference::Oracle);
    if std::env::args().any(|a| a == "ips") {
        cfg.backend = Backend::Ips;
        cfg.particles = 100_000;
        cfg.horizon = Some(60.0);
        cfg.burn_in_time = Some(10.0);
    } else {
        cfg.backend = Backend::Oracle;
    }
    let (points, reference) = convergence_study(&cfg)?;
    println!("reference mu = {reference:.10}");
    println!("{:>10} {:>14} {:>12} {:>10}", "dt", "mu", "error", "stderr");
    for p in &points {
        println!("{:>10.6} {:>14.10} {:>12.4e} {:>10.2e}", p.dt, p.mu, p.error, p.stderr);
    }
    let dts: Vec<f64> = points.iter().map(|p| p.dt).collect();
    let errs: Vec<f64> = points.iter().map(|p| p.error).collect();
    let (slope, _, r2) = loglog_slope(&dts, &errs)?;
    println!("slope = {slope:.3}  r2 = {r2:.4}");
    Ok(())
}
