use num_complex::Complex64;

use super::operator::SpectralOperator;
use crate::error::{Error, Result};

/// Norm of the shifted, scaled operator handled by one Taylor stage.
const STAGE_NORM: f64 = 3.0;
const MAX_TERMS: usize = 60;
const TERM_TOL: f64 = 1.0 / (1u64 << 53) as f64;

/// Stage layout for `exp(t A) v`: the real diagonal midpoint `shift` is taken
/// out as a scalar factor and the remainder is split into `stages` pieces of
/// norm at most [`STAGE_NORM`], each summed as a truncated Taylor series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpPlan {
    pub shift: f64,
    pub stages: usize,
    pub step: f64,
}

impl ExpPlan {
    pub fn new(a: &SpectralOperator, t: f64) -> Result<Self> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidParameter(format!("exponential time must be finite and >= 0, got {t}")));
        }
        let (lo, hi) = a.diagonal_real_range();
        let shift = 0.5 * (lo + hi);
        let norm = a.shifted_one_norm(shift) * t;
        if !norm.is_finite() {
            return Err(Error::NonFinite("operator norm".into()));
        }
        let stages = ((norm / STAGE_NORM).ceil() as usize).max(1);
        Ok(ExpPlan { shift, stages, step: t / stages as f64 })
    }
}

/// Overwrites `v` with `exp(t A) v`.
pub fn expm_action(a: &SpectralOperator, t: f64, v: &mut [Complex64]) -> Result<()> {
    let plan = ExpPlan::new(a, t)?;
    let mut work = Workspace::new(v.len());
    apply_plan(a, &plan, v, &mut work)
}

pub(crate) struct Workspace {
    term: Vec<Complex64>,
    next: Vec<Complex64>,
}

impl Workspace {
    pub(crate) fn new(n: usize) -> Self {
        Workspace { term: vec![Complex64::default(); n], next: vec![Complex64::default(); n] }
    }
}

fn sup_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max)
}

pub(crate) fn apply_plan(a: &SpectralOperator, plan: &ExpPlan, v: &mut [Complex64], work: &mut Workspace) -> Result<()> {
    if plan.step == 0.0 {
        return Ok(());
    }
    let factor = (plan.shift * plan.step).exp();
    let Workspace { term, next } = work;
    for _ in 0..plan.stages {
        term.copy_from_slice(v);
        let mut prev_small = false;
        let mut converged = false;
        for j in 1..=MAX_TERMS {
            a.apply(term, next);
            let c = plan.step / j as f64;
            for (n, t) in next.iter_mut().zip(term.iter()) {
                *n = (*n - t * plan.shift) * c;
            }
            std::mem::swap(term, next);
            for (y, t) in v.iter_mut().zip(term.iter()) {
                *y += t;
            }
            let small = sup_norm(term) <= TERM_TOL * sup_norm(v);
            if small && prev_small {
                converged = true;
                break;
            }
            prev_small = small;
        }
        if !converged {
            return Err(Error::NoConvergence { what: "Taylor series of the matrix exponential", iterations: MAX_TERMS });
        }
        for y in v.iter_mut() {
            *y *= factor;
        }
        if !v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("matrix exponential action".into()));
        }
    }
    Ok(())
}
