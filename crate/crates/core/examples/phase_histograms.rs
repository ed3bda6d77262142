//! Particle density over one period of the mixing flow. The snapshots at
//! phase 0 and phase 1 should agree up to sampling noise.

use kpp_ips::harness::phase_histograms;
use kpp_ips::{build_flow, FlowKind, FlowSpec, IpsParams, KppProblem, Result};

fn main() -> Result<()> {
    let flow = build_flow(&FlowSpec::new(FlowKind::Mixing2D, 1.0).with_theta(1.0))?;
    let problem = KppProblem::new(flow, vec![1.0, 0.0], 0.5)?;
    let params = IpsParams::new(100_000, 10, 1.0 / 36.0, 9);
    let phases: Vec<f64> = (0..=9).map(|i| i as f64 / 9.0).collect();
    let hists = phase_histograms(&problem, &params, &phases, 32)?;
    let first = &hists[0].1;
    for (phase, h) in &hists {
        println!("phase {phase:.3}: max bin {:.5}  TV to phase 0 {:.4}", h.max(), h.total_variation(first));
    }
    Ok(())
}
