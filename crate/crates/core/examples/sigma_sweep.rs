//! Rescaled front speed c̃*(σ) for the cellular flow and its power law.
//! Uses the Galerkin backend by default; pass `ips` to use particles
//! (50k particles per point, slow).

use kpp_ips::front::{powerlaw_fit, sweep_sigma, IpsBackend, MuBackend, OracleBackend};
use kpp_ips::harness::{sweep_grids, RunConfig};
use kpp_ips::{FlowKind, FlowSpec, IpsParams, Result};

fn main() -> Result<()> {
    let cfg = RunConfig::for_flow(FlowSpec::new(FlowKind::Cellular2D, 1.0));
    let sigmas: Vec<f64> = (0..5).map(|i| 0.5f64.powi(i)).collect();
    let grids = sweep_grids(&cfg, &sigmas)?;
    let backend: Box<dyn MuBackend> = if std::env::args().any(|a| a == "ips") {
        let params = IpsParams::new(50_000, 800, 1.0 / 32.0, 5).with_burn_in(200);
        Box::new(IpsBackend { params })
    } else {
        Box::new(OracleBackend { h: 16, dt_ref: 1.0 / 1024.0 })
    };
    let rows = sweep_sigma(&cfg.problem(1.0)?, &sigmas, &grids, backend.as_ref(), false)?;
    println!("{:>8} {:>10} {:>8}", "sigma", "c~*", "lambda*");
    for r in &rows {
        println!("{:>8.4} {:>10.6} {:>8.4}", r.sigma, r.c_star_tilde, r.lambda_star);
    }
    let c: Vec<f64> = rows.iter().map(|r| r.c_star_tilde).collect();
    let fit = powerlaw_fit(&sigmas, &c)?;
    println!("alpha = {:.4}  (r2 = {:.5})", fit.alpha, fit.r2);
    Ok(())
}
