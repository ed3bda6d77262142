//! Regenerates `data/oracle_reference.json`, the pinned Galerkin values the
//! test suite compares against.
//!
//! ```text
//! cargo run --release --example pin_oracle_reference [-- --splitting]
//! ```
//!
//! `--splitting` also recomputes the splitting-error table (a few minutes).

use std::time::Instant;

use kpp_ips::front::{front_speed, powerlaw_fit, sweep_sigma, OracleBackend};
use kpp_ips::harness::{convergence_study, sweep_grids, Backend, Reference, RunConfig};
use kpp_ips::spectral::{oracle_mu, splitting_errors, SplittingTestProblem};
use kpp_ips::{FlowKind, FlowSpec, KppProblem, Result};
use serde_json::json;

const H: usize = 12;
const DT_REF: f64 = 1.0 / 1024.0;

fn cellular(lambda: f64) -> Result<KppProblem> {
    RunConfig::for_flow(FlowSpec::new(FlowKind::Cellular2D, 1.0)).problem(lambda)
}

fn main() -> Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/oracle_reference.json");
    let previous: Option<serde_json::Value> =
        std::fs::read_to_string(path).ok().and_then(|t| serde_json::from_str(&t).ok());
    let clock = Instant::now();

    let mu_h12 = oracle_mu(&cellular(0.35)?, H, DT_REF)?.mu;
    let mu_h8 = oracle_mu(&cellular(0.35)?, 8, DT_REF)?.mu;
    eprintln!("steady cellular: {mu_h12} (H=8: {mu_h8})");

    let lambdas: Vec<f64> = (1..=12).map(|i| 0.1 * i as f64).collect();
    let curve: Vec<f64> =
        lambdas.iter().map(|&l| Ok(oracle_mu(&cellular(l)?, H, DT_REF)?.mu)).collect::<Result<_>>()?;

    let grid: Vec<f64> = (0..=40).map(|i| 0.8 + 0.01 * i as f64).collect();
    let c = kpp_ips::front::mu_curve(&cellular(1.0)?, &grid, &OracleBackend { h: H, dt_ref: DT_REF }, 0)?;
    let speed = front_speed(&c);

    let unsteady = FlowSpec::new(FlowKind::UnsteadyCellular2D, 1.0).with_delta(0.5);
    let mut ucfg = RunConfig::for_flow(unsteady);
    ucfg.lambda = Some(0.57);
    ucfg.period = Some(1.0);
    let mu_unsteady = oracle_mu(&ucfg.problem(0.57)?, H, DT_REF)?.mu;
    eprintln!("unsteady cellular: {mu_unsteady} ({:.0?})", clock.elapsed());

    let sigmas: Vec<f64> = (0..5).map(|i| 0.5f64.powi(i)).collect();
    let scfg = RunConfig::for_flow(FlowSpec::new(FlowKind::Cellular2D, 1.0));
    let grids = sweep_grids(&scfg, &sigmas)?;
    let rows = sweep_sigma(&cellular(1.0)?, &sigmas, &grids, &OracleBackend { h: H, dt_ref: DT_REF }, false)?;
    let tilde: Vec<f64> = rows.iter().map(|r| r.c_star_tilde).collect();
    let alpha = powerlaw_fit(&sigmas, &tilde)?.alpha;

    // eigenvalue error of the split Galerkin propagator (no particles)
    let dts: Vec<f64> = (1..=5).map(|k| 0.5f64.powi(k)).collect();
    let mut discrete = serde_json::Map::new();
    for (name, mut cfg) in [("cellular", scfg.clone()), ("unsteady_cellular", ucfg.clone())] {
        cfg.lambda = Some(if name == "cellular" { 0.35 } else { 0.57 });
        cfg.backend = Backend::Oracle;
        cfg.dt_list = Some(dts.clone());
        cfg.reference = Some(Reference::Oracle);
        let (points, _) = convergence_study(&cfg)?;
        let errs: Vec<f64> = points.iter().map(|p| p.error).collect();
        let slope = powerlaw_fit(&dts, &errs)?.alpha;
        discrete.insert(name.into(), json!({ "dt": dts, "error": errs, "slope": slope }));
    }

    let splitting = if std::env::args().any(|a| a == "--splitting") {
        let sdts: Vec<f64> = (1..=7).map(|k| 0.5f64.powi(k)).collect();
        let errors = splitting_errors(&SplittingTestProblem::new(H)?, &sdts, DT_REF, 1.0)?;
        let (d, e): (Vec<f64>, Vec<f64>) = errors.into_iter().unzip();
        let slope = powerlaw_fit(&d, &e)?.alpha;
        json!({ "dt": d, "error": e, "slope": slope })
    } else {
        previous.as_ref().map(|p| p["splitting_test_problem"].clone()).unwrap_or(serde_json::Value::Null)
    };

    let doc = json!({
        "version": 1,
        "H": H,
        "dt_ref": DT_REF,
        "cellular": {
            "A": 1.0,
            "lambda": 0.35,
            "mu": mu_h12,
            "mu_H8": mu_h8,
            "curve": { "lambda": lambdas, "mu": curve },
            "front_speed": { "c_star": speed.c_star, "lambda_star": speed.lambda_star },
        },
        "unsteady_cellular": { "A": 1.0, "delta": 0.5, "lambda": 0.57, "T": 1.0, "mu": mu_unsteady },
        "homogeneous": { "lambda": 1.0, "mu": 2.0, "c_star": 2.0, "lambda_star": 1.0 },
        "cellular_sweep": {
            "sigma": sigmas,
            "c_star_tilde": tilde,
            "lambda_star": rows.iter().map(|r| r.lambda_star).collect::<Vec<_>>(),
            "alpha": alpha,
        },
        "lie_trotter_eigenvalue_error": discrete,
        "splitting_test_problem": splitting,
    });
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    eprintln!("wrote {path} in {:.0?}", clock.elapsed());
    Ok(())
}
