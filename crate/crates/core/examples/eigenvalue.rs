//! Particle estimate of μ(λ) for the steady cellular flow next to the
//! Fourier-Galerkin value.
//!
//! ```text
//! cargo run --release --example eigenvalue -- [particles] [iterations]
//! ```

use kpp_ips::spectral::oracle_mu;
use kpp_ips::{build_flow, estimate_mu, FlowKind, FlowSpec, IpsParams, KppProblem, Result};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let particles = args.next().unwrap_or(50_000);
    let iterations = args.next().unwrap_or(200);

    let flow = build_flow(&FlowSpec::new(FlowKind::Cellular2D, 1.0))?;
    let problem = KppProblem::new(flow, vec![1.0, 0.0], 0.35)?;
    let params = IpsParams::new(particles, iterations, 1.0 / 32.0, 2024).with_burn_in(iterations / 4);
    let est = estimate_mu(&problem, &params)?;
    let reference = oracle_mu(&problem, 12, 1.0 / 1024.0)?;

    println!("particles       {particles}");
    println!("iterations      {iterations} (burn-in {})", est.burn_in);
    println!("mu (particles)  {:.6} ± {:.6}", est.mu, est.stderr);
    println!("mu (Galerkin)   {:.10}", reference.mu);
    println!("difference      {:+.2e}", est.mu - reference.mu);
    Ok(())
}
