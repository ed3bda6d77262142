//! Euler-Maruyama transport of a particle cloud in the steady cellular flow,
//! without weighting. Prints the mean square displacement of the unwrapped
//! cloud, which grows linearly at the effective diffusivity.

use kpp_ips::sde::em_step;
use kpp_ips::{build_flow, Ensemble, FlowKind, FlowSpec, Result};

fn main() -> Result<()> {
    let flow = build_flow(&FlowSpec::new(FlowKind::Cellular2D, 4.0))?;
    let n = 20_000;
    let dt = 1.0 / 64.0;
    let mut ens = Ensemble::uniform(n, 2, 11)?;
    let start = ens.positions().to_vec();
    let mut unwrapped = start.clone();
    println!("{:>6} {:>12}", "t", "msd/(2dt)");
    for step in 1..=1280 {
        let before = ens.positions().to_vec();
        em_step(&mut ens, &flow, &[0.0, 0.0], 1.0, (step - 1) as f64 * dt, dt)?;
        for ((u, &a), &b) in unwrapped.iter_mut().zip(&before).zip(ens.positions()) {
            // undo the wrap: one step never moves a particle by more than π
            let mut dx = b - a;
            if dx > std::f64::consts::PI {
                dx -= kpp_ips::sde::TWO_PI;
            } else if dx < -std::f64::consts::PI {
                dx += kpp_ips::sde::TWO_PI;
            }
            *u += dx;
        }
        if step % 128 == 0 {
            let t = step as f64 * dt;
            let msd: f64 = unwrapped.iter().zip(&start).map(|(u, s)| (u - s).powi(2)).sum::<f64>() / n as f64;
            println!("{t:>6.1} {:>12.4}", msd / (2.0 * 2.0 * t));
        }
    }
    Ok(())
}
