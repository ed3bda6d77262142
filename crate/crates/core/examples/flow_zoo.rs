//! Evaluates every flow in the zoo at a few points and reports the largest
//! finite-difference divergence found on a coarse grid.

use kpp_ips::flow::check_divergence;
use kpp_ips::sde::TWO_PI;
use kpp_ips::{build_flow, FlowKind, FlowSpec, Result};

fn spec(kind: FlowKind) -> FlowSpec {
    match kind {
        FlowKind::UnsteadyCellular2D => FlowSpec::new(kind, 1.0).with_delta(0.5),
        FlowKind::Mixing2D | FlowKind::TimeDependentKolmogorov3D => FlowSpec::new(kind, 1.0).with_theta(1.0),
        FlowKind::TimeDependentABC3D => FlowSpec::new(kind, 1.0).with_omega(1.0),
        _ => FlowSpec::new(kind, 1.0),
    }
}

fn main() -> Result<()> {
    println!("{:<28} {:>3} {:>8} {:>12}  v(1,2,3) at t=0.3", "flow", "d", "period", "max |div|");
    for kind in FlowKind::ALL {
        let flow = build_flow(&spec(kind))?;
        let d = flow.dim();
        let mut worst: f64 = 0.0;
        let n: usize = 9;
        for i in 0..n.pow(d as u32) {
            let x: Vec<f64> = (0..d).map(|j| TWO_PI * ((i / n.pow(j as u32)) % n) as f64 / n as f64 + 0.1).collect();
            worst = worst.max(check_divergence(&flow, 0.3, &x, 1e-4).abs());
        }
        let v = flow.velocity(0.3, &[1.0, 2.0, 3.0][..d]);
        let period = flow.period().map_or("steady".to_string(), |p| format!("{p:.4}"));
        println!("{:<28} {:>3} {:>8} {:>12.2e}  {v:.4?}", kind.name(), d, period, worst);
    }
    Ok(())
}
