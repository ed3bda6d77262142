//! End-to-end runs of the `kpp` binary.

use std::path::Path;
use std::process::Command;

fn kpp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kpp")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const HOMOGENEOUS: &str = r#"{"flow":{"name":"Cellular2D","A":0.0},"lambda":1.0,"N":1000,"n_iters":10,"dt":0.1}"#;

#[test]
fn eig_homogeneous_exact_with_assert() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "h.json", HOMOGENEOUS);
    let out = dir.path().join("run").display().to_string();
    let res = kpp(&["eig", "--config", &cfg, "--out", &out, "--assert", "--threads", "1"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{out}_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mu"].as_f64(), Some(2.0));
    let csv = std::fs::read_to_string(format!("{out}_curve.csv")).unwrap();
    let first = csv.lines().next().unwrap();
    assert!(first.starts_with('#') && first.contains(summary["config_sha256"].as_str().unwrap()));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", r#"{"flow":{"name":"Cellular2D","A":1.0},"lambda":1,"lambda_grid":[1]}"#);
    assert_eq!(kpp(&["eig", "--config", &bad]).status.code(), Some(2));
    let missing = dir.path().join("missing.json").display().to_string();
    assert_eq!(kpp(&["eig", "--config", &missing]).status.code(), Some(2));
    let period = write_config(
        dir.path(),
        "p.json",
        r#"{"flow":{"name":"UnsteadyCellular2D","A":1.0,"delta":0.5},"lambda":1,"dt":0.3,"n_iters":2,"N":10}"#,
    );
    let out = dir.path().join("p").display().to_string();
    assert_eq!(kpp(&["eig", "--config", &period, "--out", &out]).status.code(), Some(2));
}

#[test]
fn non_finite_growth_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "inf.json",
        r#"{"flow":{"name":"Cellular2D","A":1e300},"lambda":1e300,"N":100,"n_iters":2,"dt":1.0}"#,
    );
    let out = dir.path().join("inf").display().to_string();
    assert_eq!(kpp(&["eig", "--config", &cfg, "--out", &out]).status.code(), Some(3));
}

#[test]
fn oracle_mismatch_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    // far too few particles and a huge step: the estimate misses the
    // Galerkin value by much more than the requested tolerance
    let cfg = write_config(
        dir.path(),
        "m.json",
        r#"{"flow":{"name":"Cellular2D","A":8.0},"lambda":1.0,"N":50,"n_iters":3,"dt":2.0,"tolerance":1e-9,"H":8}"#,
    );
    let out = dir.path().join("m").display().to_string();
    let res = kpp(&["eig", "--config", &cfg, "--out", &out, "--assert"]);
    assert_eq!(res.status.code(), Some(4), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"flow":{"name":"Cellular2D","A":1.0},"lambda":0.5,"N":500,"n_iters":4,"dt":0.25,"seed":1}"#,
    );
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name).display().to_string();
        assert!(kpp(&["eig", "--config", &cfg, "--out", &out, "--seed", seed]).status.success());
        std::fs::read_to_string(format!("{out}_curve.csv")).unwrap()
    };
    let body = |s: String| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(run("1", "a")), body(run("1", "b")));
    assert_ne!(body(run("1", "c")), body(run("2", "d")));
}

#[test]
fn front_speed_and_histogram_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "f.json",
        r#"{"flow":{"name":"Cellular2D","A":0.0},"lambda_grid":[0.5,1.0,2.0],"N":100,"n_iters":2,"dt":0.5}"#,
    );
    let out = dir.path().join("f").display().to_string();
    let res = kpp(&["front-speed", "--config", &cfg, "--out", &out, "--assert"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{out}_summary.json")).unwrap()).unwrap();
    assert!((summary["c_star"].as_f64().unwrap() - 2.0).abs() < 1e-9);

    let cfg = write_config(
        dir.path(),
        "h.json",
        r#"{"flow":{"name":"Mixing2D","A":1.0,"theta":1.0},"lambda":0.5,"N":2000,"n_iters":1,"dt":0.25,"bins":8,"phases":[0,0.5,1]}"#,
    );
    let out = dir.path().join("h").display().to_string();
    assert!(kpp(&["histogram", "--config", &cfg, "--out", &out]).status.success());
    for phase in ["0.0000", "0.5000", "1.0000"] {
        let text = std::fs::read_to_string(format!("{out}_hist_{phase}.csv")).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# kpp histogram config_sha256="));
        assert!(lines.next().unwrap().starts_with("# bins_per_dim=8"));
        assert_eq!(lines.next().unwrap(), "row,col,x1,x2,mass");
        assert_eq!(lines.count(), 64);
    }
}

#[test]
fn histogram_rejects_three_dimensional_flows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.json", r#"{"flow":{"name":"ABC3D","A":1.0},"N":10,"dt":0.5}"#);
    assert_eq!(kpp(&["histogram", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn sweep_with_synthetic_backend_recovers_exponent() {
    use kpp_ips::front::FnBackend;
    use kpp_ips::harness::{cmd_sweep_with, RunConfig, RunOptions};
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_json(
        r#"{"flow":{"name":"Cellular2D","A":1.0},"sigma_grid":[1,0.5,0.25,0.125],"lambda_grid":[0.5,0.8,1,1.5,2]}"#,
    )
    .unwrap();
    cfg.accept = Some(kpp_ips::harness::Band { min: 0.5 - 1e-9, max: 0.5 + 1e-9 });
    // c̃ = σ^0.5 exactly: μ/λ = σ^0.5 (λ + 1/λ) / 2
    let backend = FnBackend(|p: &kpp_ips::KppProblem, _| {
        Ok((p.sigma.unwrap().sqrt() * (p.lambda * p.lambda + 1.0) / 2.0, 0.0))
    });
    let opts = RunOptions { out: Some(dir.path().join("s").display().to_string()), assert: true };
    let body = cmd_sweep_with(&cfg, &opts, &backend).unwrap();
    assert!((body["alpha"].as_f64().unwrap() - 0.5).abs() < 1e-10);
}
