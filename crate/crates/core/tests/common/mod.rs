#![allow(dead_code)]

use std::io::Write;

use kpp_ips::{build_flow, FlowKind, FlowSpec, KppProblem};
use serde_json::Value;

/// Writes straight to the process stderr so the line shows up even when the
/// test harness captures output.
pub fn report(id: &str, pass: bool, detail: &str) {
    let line = format!("{} criterion {id}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

pub fn pinned() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/oracle_reference.json");
    serde_json::from_str(&std::fs::read_to_string(path).expect("pinned oracle file")).expect("valid JSON")
}

pub fn floats(v: &Value) -> Vec<f64> {
    v.as_array().expect("array").iter().map(|x| x.as_f64().expect("number")).collect()
}

pub fn cellular(amplitude: f64, lambda: f64) -> KppProblem {
    let flow = build_flow(&FlowSpec::new(FlowKind::Cellular2D, amplitude)).unwrap();
    KppProblem::new(flow, vec![1.0, 0.0], lambda).unwrap()
}

pub fn unsteady_cellular(delta: f64, lambda: f64) -> KppProblem {
    let flow = build_flow(&FlowSpec::new(FlowKind::UnsteadyCellular2D, 1.0).with_delta(delta)).unwrap();
    KppProblem::new(flow, vec![1.0, 0.0], lambda).unwrap()
}

/// `|a - b| / sqrt(se_a² + se_b²)`
pub fn z_score(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs() / (a.1 * a.1 + b.1 * b.1).sqrt()
}
