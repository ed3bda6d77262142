//! Closed-form velocity fields on the torus `[0, 2π)^d`.
//!
//! Every field is 2π-periodic in each coordinate and, when time-dependent,
//! periodic in time. All of them except the 2D mixing flow are exactly
//! divergence-free; see [`Flow::is_solenoidal`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlowKind {
    /// `(-sin x1 cos x2, cos x1 sin x2)`
    Cellular2D,
    /// Cellular flow modulated by `1 + δ cos 2πt`.
    UnsteadyCellular2D,
    /// `(-cos x2 - θ sin x1 cos 2πt, cos x1 + θ sin x2 cos 2πt)`
    Mixing2D,
    /// Arnold-Beltrami-Childress flow.
    ABC3D,
    /// ABC flow with every argument shifted by `sin 2πΩt`.
    TimeDependentABC3D,
    /// `(sin x3, sin x1, sin x2)`
    Kolmogorov3D,
    /// Kolmogorov flow with every argument shifted by `θ sin 2πt`.
    TimeDependentKolmogorov3D,
}

impl FlowKind {
    pub const ALL: [FlowKind; 7] = [
        FlowKind::Cellular2D,
        FlowKind::UnsteadyCellular2D,
        FlowKind::Mixing2D,
        FlowKind::ABC3D,
        FlowKind::TimeDependentABC3D,
        FlowKind::Kolmogorov3D,
        FlowKind::TimeDependentKolmogorov3D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FlowKind::Cellular2D => "Cellular2D",
            FlowKind::UnsteadyCellular2D => "UnsteadyCellular2D",
            FlowKind::Mixing2D => "Mixing2D",
            FlowKind::ABC3D => "ABC3D",
            FlowKind::TimeDependentABC3D => "TimeDependentABC3D",
            FlowKind::Kolmogorov3D => "Kolmogorov3D",
            FlowKind::TimeDependentKolmogorov3D => "TimeDependentKolmogorov3D",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            FlowKind::Cellular2D | FlowKind::UnsteadyCellular2D | FlowKind::Mixing2D => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FlowKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownFlow(s.to_string()))
    }
}

/// Named, parameterized flow. Serializes with the field names used by the
/// run configuration: `name`, `A`, `delta`, `theta`, `Omega`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub name: FlowKind,
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(rename = "Omega", default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

impl FlowSpec {
    pub fn new(name: FlowKind, amplitude: f64) -> Self {
        FlowSpec { name, amplitude, delta: None, theta: None, omega: None }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = Some(omega);
        self
    }
}

/// Validated, immutable velocity evaluator.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    spec: FlowSpec,
    amplitude: f64,
    delta: f64,
    theta: f64,
    omega: f64,
}

/// A flow with its time dependence evaluated at one instant. The particle
/// loops freeze the flow once per substep and evaluate it at many points.
#[derive(Clone, Copy, Debug)]
pub enum FrozenFlow {
    Cellular { a: f64 },
    Mixing { a: f64, th: f64 },
    Abc { a: f64, s: f64 },
    Kolmogorov { a: f64, s: f64 },
}

fn check_unused(kind: FlowKind, param: &'static str, value: Option<f64>) -> Result<()> {
    match value {
        Some(v) if v != 0.0 => Err(Error::UnexpectedParameter { flow: kind.name(), param }),
        _ => Ok(()),
    }
}

fn finite_param(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")))
    }
}

/// Builds the evaluator for `spec`, rejecting parameters the named flow does
/// not use (zero is tolerated as "absent").
pub fn build_flow(spec: &FlowSpec) -> Result<Flow> {
    let kind = spec.name;
    let amplitude = finite_param("A", spec.amplitude)?;
    if amplitude < 0.0 {
        return Err(Error::InvalidParameter(format!("A must be >= 0, got {amplitude}")));
    }
    let uses_delta = kind == FlowKind::UnsteadyCellular2D;
    let uses_theta = matches!(kind, FlowKind::Mixing2D | FlowKind::TimeDependentKolmogorov3D);
    let uses_omega = kind == FlowKind::TimeDependentABC3D;
    if !uses_delta {
        check_unused(kind, "delta", spec.delta)?;
    }
    if !uses_theta {
        check_unused(kind, "theta", spec.theta)?;
    }
    if !uses_omega {
        check_unused(kind, "Omega", spec.omega)?;
    }
    let delta = finite_param("delta", spec.delta.unwrap_or(0.0))?;
    let theta = finite_param("theta", spec.theta.unwrap_or(0.0))?;
    let omega = finite_param("Omega", spec.omega.unwrap_or(0.0))?;
    if uses_omega && omega <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "TimeDependentABC3D needs Omega > 0, got {omega}"
        )));
    }
    Ok(Flow { spec: spec.clone(), amplitude, delta, theta, omega })
}

impl Flow {
    pub fn new(spec: &FlowSpec) -> Result<Self> {
        build_flow(spec)
    }

    /// Shorthand for a flow with no extra parameters.
    pub fn simple(kind: FlowKind, amplitude: f64) -> Result<Self> {
        build_flow(&FlowSpec::new(kind, amplitude))
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn kind(&self) -> FlowKind {
        self.spec.name
    }

    pub fn dim(&self) -> usize {
        self.spec.name.dim()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Time period, or `None` for a steady field (any period works).
    pub fn period(&self) -> Option<f64> {
        match self.spec.name {
            FlowKind::UnsteadyCellular2D | FlowKind::Mixing2D | FlowKind::TimeDependentKolmogorov3D => {
                Some(1.0)
            }
            FlowKind::TimeDependentABC3D => Some(1.0 / self.omega),
            _ => None,
        }
    }

    pub fn is_steady(&self) -> bool {
        self.period().is_none()
    }

    /// Whether the closed form is analytically divergence-free. The mixing
    /// flow has divergence `Aθ cos(2πt)(cos x2 - cos x1)`.
    pub fn is_solenoidal(&self) -> bool {
        !(self.spec.name == FlowKind::Mixing2D && self.theta != 0.0 && self.amplitude != 0.0)
    }

    pub fn frozen(&self, t: f64) -> FrozenFlow {
        let a = self.amplitude;
        match self.spec.name {
            FlowKind::Cellular2D => FrozenFlow::Cellular { a },
            FlowKind::UnsteadyCellular2D => {
                FrozenFlow::Cellular { a: a * (1.0 + self.delta * (TWO_PI * t).cos()) }
            }
            FlowKind::Mixing2D => FrozenFlow::Mixing { a, th: self.theta * (TWO_PI * t).cos() },
            FlowKind::ABC3D => FrozenFlow::Abc { a, s: 0.0 },
            FlowKind::TimeDependentABC3D => {
                FrozenFlow::Abc { a, s: (TWO_PI * self.omega * t).sin() }
            }
            FlowKind::Kolmogorov3D => FrozenFlow::Kolmogorov { a, s: 0.0 },
            FlowKind::TimeDependentKolmogorov3D => {
                FrozenFlow::Kolmogorov { a, s: self.theta * (TWO_PI * t).sin() }
            }
        }
    }

    /// Velocity at `(t, x)`. `x` need not be wrapped to the torus.
    pub fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.frozen(t).eval(x, &mut out);
        out
    }

    pub fn velocity_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.frozen(t).eval(x, out);
    }
}

impl FrozenFlow {
    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            FrozenFlow::Cellular { a } => {
                let (s1, c1) = x[0].sin_cos();
                let (s2, c2) = x[1].sin_cos();
                out[0] = -a * s1 * c2;
                out[1] = a * c1 * s2;
            }
            FrozenFlow::Mixing { a, th } => {
                let (s1, c1) = x[0].sin_cos();
                let (s2, c2) = x[1].sin_cos();
                out[0] = a * (-c2 - th * s1);
                out[1] = a * (c1 + th * s2);
            }
            FrozenFlow::Abc { a, s } => {
                let (s1, c1) = (x[0] + s).sin_cos();
                let (s2, c2) = (x[1] + s).sin_cos();
                let (s3, c3) = (x[2] + s).sin_cos();
                out[0] = a * (s3 + c2);
                out[1] = a * (s1 + c3);
                out[2] = a * (s2 + c1);
            }
            FrozenFlow::Kolmogorov { a, s } => {
                out[0] = a * (x[2] + s).sin();
                out[1] = a * (x[0] + s).sin();
                out[2] = a * (x[1] + s).sin();
            }
        }
    }

    /// `v(x) · e` without materializing the vector.
    #[inline]
    pub fn dot(&self, x: &[f64], e: &[f64]) -> f64 {
        let mut v = [0.0; 3];
        let d = e.len();
        self.eval(x, &mut v[..d]);
        v[..d].iter().zip(e).map(|(a, b)| a * b).sum()
    }
}

/// Central-difference divergence estimate with step `h`.
pub fn check_divergence(flow: &Flow, t: f64, x: &[f64], h: f64) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    let d = flow.dim();
    let frozen = flow.frozen(t);
    let mut xp = x.to_vec();
    let mut vp = vec![0.0; d];
    let mut vm = vec![0.0; d];
    let mut div = 0.0;
    for j in 0..d {
        xp[j] = x[j] + h;
        frozen.eval(&xp, &mut vp);
        xp[j] = x[j] - h;
        frozen.eval(&xp, &mut vm);
        xp[j] = x[j];
        div += (vp[j] - vm[j]) / (2.0 * h);
    }
    div
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn cellular_vanishes_at_origin() {
        let f = Flow::simple(FlowKind::Cellular2D, 1.0).unwrap();
        assert_eq!(f.velocity(0.3, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn abc_at_origin_is_all_ones() {
        let f = Flow::simple(FlowKind::ABC3D, 1.0).unwrap();
        assert_eq!(f.velocity(0.0, &[0.0, 0.0, 0.0]), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn unsteady_cellular_modulation_at_t0() {
        let spec = FlowSpec::new(FlowKind::UnsteadyCellular2D, 1.0).with_delta(0.5);
        let f = build_flow(&spec).unwrap();
        let base = Flow::simple(FlowKind::Cellular2D, 1.0).unwrap();
        let x = [0.7, -1.3];
        let expect: Vec<f64> = base.velocity(0.0, &x).iter().map(|v| 1.5 * v).collect();
        assert!(close(&f.velocity(0.0, &x), &expect, 1e-15));
    }

    #[test]
    fn point_values() {
        let f = Flow::simple(FlowKind::Cellular2D, 2.0).unwrap();
        assert!(close(&f.velocity(0.0, &[PI / 2.0, 0.0]), &[-2.0, 0.0], 1e-15));
        let k = Flow::simple(FlowKind::Kolmogorov3D, 1.0).unwrap();
        assert!(close(&k.velocity(0.0, &[PI / 2.0; 3]), &[1.0, 1.0, 1.0], 1e-15));
    }

    #[test]
    fn rejects_foreign_parameters() {
        let spec = FlowSpec::new(FlowKind::Cellular2D, 1.0).with_delta(0.5);
        assert!(matches!(build_flow(&spec), Err(Error::UnexpectedParameter { .. })));
        let spec = FlowSpec::new(FlowKind::ABC3D, 1.0).with_omega(0.0);
        assert!(build_flow(&spec).is_ok());
        let spec = FlowSpec::new(FlowKind::TimeDependentABC3D, 1.0);
        assert!(build_flow(&spec).is_err());
        assert!(matches!("Spiral2D".parse::<FlowKind>(), Err(Error::UnknownFlow(_))));
    }

    #[test]
    fn spec_json_field_names() {
        let spec = FlowSpec::new(FlowKind::TimeDependentABC3D, 2.0).with_omega(0.125);
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(s, r#"{"name":"TimeDependentABC3D","A":2.0,"Omega":0.125}"#);
        let back: FlowSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<FlowSpec>(r#"{"name":"Foo","A":1.0}"#).is_err());
    }

    #[test]
    fn mixing_divergence_matches_hand_derivation() {
        // div v = θ cos(2πt) (cos x2 - cos x1) for A = 1
        let spec = FlowSpec::new(FlowKind::Mixing2D, 1.0).with_theta(1.0);
        let f = build_flow(&spec).unwrap();
        assert!(!f.is_solenoidal());
        for &(t, x1, x2) in &[(0.0f64, 0.3f64, 2.0f64), (0.1, 1.0, 4.0), (0.25, 2.0, 0.5)] {
            let analytic = (TWO_PI * t).cos() * (x2.cos() - x1.cos());
            let fd = check_divergence(&f, t, &[x1, x2], 1e-4);
            assert!((fd - analytic).abs() < 1e-7, "t={t}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn periods() {
        let f = build_flow(&FlowSpec::new(FlowKind::TimeDependentABC3D, 1.0).with_omega(0.25)).unwrap();
        assert_eq!(f.period(), Some(4.0));
        assert!(Flow::simple(FlowKind::ABC3D, 1.0).unwrap().is_steady());
    }
}
