//! Front speed from the ratio μ(λ)/λ: the homogeneous case, where c* = 2,
//! and the cellular flow with the Galerkin backend.

use kpp_ips::front::{default_lambda_center, front_speed, lambda_grid_around, mu_curve, FnBackend, OracleBackend};
use kpp_ips::{build_flow, FlowKind, FlowSpec, KppProblem, Result};

fn main() -> Result<()> {
    let still = build_flow(&FlowSpec::new(FlowKind::Cellular2D, 0.0))?;
    let problem = KppProblem::new(still, vec![1.0, 0.0], 1.0)?;
    let exact = FnBackend(|p: &KppProblem, _| Ok((p.potential_constant(), 0.0)));
    let curve = mu_curve(&problem, &[0.5, 1.0, 2.0], &exact, 0)?;
    let s = front_speed(&curve);
    println!("no flow:  ratios {:?}  c* = {:.12}  λ* = {:.12}", curve.ratio, s.c_star, s.lambda_star);

    for amplitude in [1.0, 4.0, 16.0] {
        let flow = build_flow(&FlowSpec::new(FlowKind::Cellular2D, amplitude))?;
        let problem = KppProblem::new(flow, vec![1.0, 0.0], 1.0)?;
        // λ* of amplitude A equals the rescaled λ* at σ = 1/A
        let grid = lambda_grid_around(default_lambda_center(FlowKind::Cellular2D, 1.0 / amplitude), 9);
        let curve = mu_curve(&problem, &grid, &OracleBackend { h: 16, dt_ref: 1.0 / 1024.0 }, 0)?;
        let s = front_speed(&curve);
        println!("A = {amplitude:>4}: c* = {:.6}  λ* = {:.4}  ({:?})", s.c_star, s.lambda_star, s.method);
    }
    Ok(())
}
