//! Interacting-particle approximation of the Feynman-Kac semigroup and the
//! principal-eigenvalue estimator built on it.
//!
//! One substep propagates every particle with Euler-Maruyama, weighs the
//! propagated positions by `exp(c(t_i, x) dt)`, records the log of the mean
//! weight as the mass growth rate, and resamples multinomially. A period is
//! `M` substeps; the eigenvalue estimate is the average growth rate over
//! periods.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::rng::{RandomSource, RngStream};
use crate::sde::{em_move, Ensemble, CHUNK, TWO_PI};

/// Which constant drift accompanies the flow in the tilted generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftConvention {
    /// `2κλe`
    #[default]
    KappaLambda,
    /// `2λe`; identical to the default when κ = 1.
    Lambda,
}

/// Coefficients of the λ-tilted linearized KPP operator
/// `κΔ + (2κλe + v)·∇ + κλ² + λ v·e + f'(0)/τ`.
///
/// With `sigma` set, the amplitude-rescaled operator
/// `σΔ + (2σλe + v)·∇ + σλ² + λ v·e + σ f'(0)` is used instead and `kappa`,
/// `tau` are ignored.
#[derive(Clone, Debug)]
pub struct KppProblem {
    pub flow: Flow,
    pub kappa: f64,
    pub tau: f64,
    pub fprime0: f64,
    pub direction: Vec<f64>,
    pub lambda: f64,
    pub sigma: Option<f64>,
    pub drift: DriftConvention,
}

impl KppProblem {
    /// κ = τ = f'(0) = 1, no rescaling.
    pub fn new(flow: Flow, direction: Vec<f64>, lambda: f64) -> Result<Self> {
        let p = KppProblem {
            flow,
            kappa: 1.0,
            tau: 1.0,
            fprime0: 1.0,
            direction,
            lambda,
            sigma: None,
            drift: DriftConvention::KappaLambda,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_kappa(mut self, kappa: f64) -> Result<Self> {
        self.kappa = kappa;
        self.validate().map(|_| self)
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        self.tau = tau;
        self.validate().map(|_| self)
    }

    pub fn with_fprime0(mut self, fprime0: f64) -> Result<Self> {
        self.fprime0 = fprime0;
        self.validate().map(|_| self)
    }

    pub fn with_sigma(mut self, sigma: Option<f64>) -> Result<Self> {
        self.sigma = sigma;
        self.validate().map(|_| self)
    }

    pub fn with_drift(mut self, drift: DriftConvention) -> Self {
        self.drift = drift;
        self
    }

    /// Same problem at another tilt.
    pub fn at_lambda(&self, lambda: f64) -> Result<Self> {
        let mut p = self.clone();
        p.lambda = lambda;
        p.validate().map(|_| p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.flow.dim();
        if self.direction.len() != d {
            return Err(Error::Dimension { expected: d, got: self.direction.len() });
        }
        let norm = self.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("direction must be a unit vector, |e| = {norm}")));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("kappa", self.kappa)?;
        positive("tau", self.tau)?;
        if let Some(s) = self.sigma {
            positive("sigma", s)?;
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !self.fprime0.is_finite() {
            return Err(Error::InvalidParameter("f'(0) must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    /// Diffusion coefficient of the particle SDE.
    pub fn diffusion(&self) -> f64 {
        self.sigma.unwrap_or(self.kappa)
    }

    /// Constant part of the drift.
    pub fn drift_shift(&self) -> Vec<f64> {
        let scale = match (self.sigma, self.drift) {
            (Some(s), _) => 2.0 * s * self.lambda,
            (None, DriftConvention::KappaLambda) => 2.0 * self.kappa * self.lambda,
            (None, DriftConvention::Lambda) => 2.0 * self.lambda,
        };
        self.direction.iter().map(|e| scale * e).collect()
    }

    /// The part of the potential that does not depend on position.
    pub fn potential_constant(&self) -> f64 {
        let l2 = self.lambda * self.lambda;
        match self.sigma {
            Some(s) => s * l2 + s * self.fprime0,
            None => self.kappa * l2 + self.fprime0 / self.tau,
        }
    }

    /// `c(t, x)`, in units of 1/time.
    pub fn potential(&self, t: f64, x: &[f64]) -> f64 {
        self.potential_constant() + self.lambda * self.flow.frozen(t).dot(x, &self.direction)
    }
}

/// Convenience wrapper matching the operation name used in the docs.
pub fn potential(problem: &KppProblem, t: f64, x: &[f64]) -> f64 {
    problem.potential(t, x)
}

/// `exp(s - max)` for every exponent together with the max and their sum.
/// The sum is accumulated in fixed-size chunks so the result does not depend
/// on thread count.
fn shifted_exponentials(values: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("no weights to normalize".into()));
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("weight exponent is NaN or +inf".into()));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NonFinite("every weight exponent is -inf".into()));
    }
    let exps: Vec<f64> = values.par_iter().map(|v| (v - max).exp()).collect();
    let sum = chunked_sum(&exps);
    Ok((max, exps, sum))
}

fn chunked_sum(values: &[f64]) -> f64 {
    let partial: Vec<f64> = values.par_chunks(CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    partial.iter().sum()
}

/// Normalized exponential weights `exp(s_p) / Σ_q exp(s_q)`, computed with the
/// max subtracted first.
pub fn weights(values: &[f64]) -> Result<Vec<f64>> {
    let (_, mut exps, sum) = shifted_exponentials(values)?;
    exps.par_iter_mut().for_each(|w| *w /= sum);
    Ok(exps)
}

/// `log(mean(exp(values)))`, overflow-safe.
pub fn log_mean_exp(values: &[f64]) -> Result<f64> {
    let (max, _, sum) = shifted_exponentials(values)?;
    Ok(max + (sum / values.len() as f64).ln())
}

/// Walker alias table for O(1) draws from a discrete distribution.
struct AliasTable {
    /// (acceptance probability, alias) per cell
    cells: Vec<(f64, usize)>,
}

impl AliasTable {
    /// Vose's construction; `w` must be non-negative with positive sum.
    fn new(w: &[f64], total: f64) -> Self {
        let n = w.len();
        let scale = n as f64 / total;
        let mut cells: Vec<(f64, usize)> = w.iter().enumerate().map(|(j, &x)| (x * scale, j)).collect();
        let mut small = Vec::new();
        let mut large = Vec::new();
        for (j, c) in cells.iter().enumerate() {
            if c.0 < 1.0 {
                small.push(j);
            } else {
                large.push(j);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            cells[s].1 = l;
            cells[l].0 -= 1.0 - cells[s].0;
            if cells[l].0 < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for j in small.into_iter().chain(large) {
            cells[j] = (1.0, j);
        }
        AliasTable { cells }
    }

    #[inline]
    fn sample(&self, u: f64) -> usize {
        let n = self.cells.len();
        let x = u * n as f64;
        let j = (x as usize).min(n - 1);
        let (prob, alias) = self.cells[j];
        if x - (j as f64) < prob {
            j
        } else {
            alias
        }
    }
}

/// Replaces the ensemble by `N` draws from the weighted empirical measure.
/// Offspring `p` picks its parent from a Walker alias table using one uniform
/// keyed by `(iteration, substep, p)`.
pub fn multinomial_resample<R: RandomSource>(ens: &mut Ensemble, w: &[f64], source: &R) -> Result<()> {
    let n = ens.len();
    if w.len() != n {
        return Err(Error::Dimension { expected: n, got: w.len() });
    }
    let mut total = 0.0;
    for &x in w {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid resampling weight {x}")));
        }
        total += x;
    }
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("resampling weights sum to zero".into()));
    }
    let table = AliasTable::new(w, total);
    let d = ens.dim();
    let (k, i) = (ens.iteration(), ens.substep_index());
    let old = ens.positions().to_vec();
    ens.positions_mut()
        .par_chunks_mut(CHUNK * d)
        .enumerate()
        .for_each(|(c, block)| {
            for (j, x) in block.chunks_mut(d).enumerate() {
                let p = (c * CHUNK + j) as u64;
                let parent = table.sample(source.resample_uniform(k, i, p));
                x.copy_from_slice(&old[parent * d..(parent + 1) * d]);
            }
        });
    Ok(())
}

/// When to resample. The reference scheme resamples after every substep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplePolicy {
    #[default]
    EveryStep,
    /// Carry weights and resample only when the effective sample size drops
    /// below this fraction of `N`.
    EssBelow(f64),
}

/// Per-particle weights carried between substeps under
/// [`ResamplePolicy::EssBelow`].
#[derive(Clone, Debug, Default)]
pub struct CarriedWeights(Option<Vec<f64>>);

/// Propagates, weighs and resamples once. Returns the mass growth rate
/// `E = log(mean(exp(c dt))) / dt` of this substep.
pub fn substep(ens: &mut Ensemble, problem: &KppProblem, dt: f64) -> Result<f64> {
    let rng = *ens.rng();
    substep_with(ens, problem, dt, &rng, ResamplePolicy::EveryStep, &mut CarriedWeights::default())
}

pub fn substep_with<R: RandomSource>(
    ens: &mut Ensemble,
    problem: &KppProblem,
    dt: f64,
    source: &R,
    policy: ResamplePolicy,
    carried: &mut CarriedWeights,
) -> Result<f64> {
    let d = ens.dim();
    if problem.dim() != d {
        return Err(Error::Dimension { expected: d, got: problem.dim() });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let (k, i) = (ens.iteration(), ens.substep_index());
    let t = i as f64 * dt;
    let frozen = problem.flow.frozen(t);
    let shift = problem.drift_shift();
    let noise_scale = (2.0 * problem.diffusion() * dt).sqrt();
    let c0 = problem.potential_constant();
    let lambda = problem.lambda;
    let e = &problem.direction;

    let n = ens.len();
    let mut exponents = vec![0.0; n];
    let ok = ens
        .positions_mut()
        .par_chunks_mut(CHUNK * d)
        .zip(exponents.par_chunks_mut(CHUNK))
        .enumerate()
        .map(|(c, (block, s))| {
            let mut z = [0.0; 3];
            let mut ok = true;
            for (j, x) in block.chunks_mut(d).enumerate() {
                let p = (c * CHUNK + j) as u64;
                source.normals(k, i, p, &mut z[..d]);
                ok &= em_move(&frozen, &shift, noise_scale, dt, &z[..d], x);
                // potential at the propagated position, left-endpoint time
                s[j] = (c0 + lambda * frozen.dot(x, e)) * dt;
            }
            ok
        })
        .reduce(|| true, |a, b| a && b);
    if !ok {
        return Err(Error::NonFinite(format!("particle left the reals at substep {i} of iteration {k}")));
    }
    ens.advance_substep();

    let growth = match (policy, carried.0.take()) {
        (ResamplePolicy::EveryStep, _) | (ResamplePolicy::EssBelow(_), None) => {
            let (max, mut w, sum) = shifted_exponentials(&exponents)?;
            let growth = (max + (sum / n as f64).ln()) / dt;
            w.par_iter_mut().for_each(|x| *x /= sum);
            finish_weights(ens, policy, w, source, carried)?;
            growth
        }
        (ResamplePolicy::EssBelow(_), Some(prev)) => {
            // mean of exp(c dt) under the carried probabilities
            for (s, w) in exponents.iter_mut().zip(&prev) {
                *s += w.ln();
            }
            let (max, mut w, sum) = shifted_exponentials(&exponents)?;
            let growth = (max + sum.ln()) / dt;
            w.par_iter_mut().for_each(|x| *x /= sum);
            finish_weights(ens, policy, w, source, carried)?;
            growth
        }
    };
    if !growth.is_finite() {
        return Err(Error::NonFinite(format!("growth rate at substep {i} of iteration {k}")));
    }
    Ok(growth)
}

fn finish_weights<R: RandomSource>(
    ens: &mut Ensemble,
    policy: ResamplePolicy,
    w: Vec<f64>,
    source: &R,
    carried: &mut CarriedWeights,
) -> Result<()> {
    let n = w.len() as f64;
    match policy {
        ResamplePolicy::EveryStep => multinomial_resample(ens, &w, source),
        ResamplePolicy::EssBelow(frac) => {
            let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
            if ess < frac * n {
                multinomial_resample(ens, &w, source)
            } else {
                carried.0 = Some(w);
                Ok(())
            }
        }
    }
}

/// Growth rates of one period.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodResult {
    /// `E_k = M⁻¹ Σ_i E_{k,i}`
    pub mean: f64,
    pub per_substep: Vec<f64>,
}

/// Number of substeps per period for `dt`, checking `M·dt = T` for
/// time-periodic flows. Steady flows default to `M = 1`.
pub fn substeps_for(flow: &Flow, dt: f64, requested: Option<usize>) -> Result<usize> {
    match (flow.period(), requested) {
        (None, m) => Ok(m.unwrap_or(1).max(1)),
        (Some(period), m) => {
            let m = m.unwrap_or_else(|| (period / dt).round().max(1.0) as usize);
            check_period(flow, m, dt)?;
            Ok(m)
        }
    }
}

fn check_period(flow: &Flow, m: usize, dt: f64) -> Result<()> {
    if let Some(period) = flow.period() {
        let got = m as f64 * dt;
        if (got - period).abs() > 1e-10 {
            return Err(Error::PeriodMismatch { expected: period, got });
        }
    }
    Ok(())
}

/// Runs `m` substeps and closes the period.
pub fn run_period(ens: &mut Ensemble, problem: &KppProblem, m: usize, dt: f64) -> Result<PeriodResult> {
    let rng = *ens.rng();
    run_period_with(ens, problem, m, dt, &rng, ResamplePolicy::EveryStep, &mut CarriedWeights::default())
}

pub fn run_period_with<R: RandomSource>(
    ens: &mut Ensemble,
    problem: &KppProblem,
    m: usize,
    dt: f64,
    source: &R,
    policy: ResamplePolicy,
    carried: &mut CarriedWeights,
) -> Result<PeriodResult> {
    if m == 0 {
        return Err(Error::InvalidParameter("a period needs at least one substep".into()));
    }
    check_period(&problem.flow, m, dt)?;
    let mut per_substep = Vec::with_capacity(m);
    for _ in 0..m {
        per_substep.push(substep_with(ens, problem, dt, source, policy, carried)?);
    }
    ens.finish_period();
    let mean = per_substep.iter().sum::<f64>() / m as f64;
    Ok(PeriodResult { mean, per_substep })
}

/// Run parameters for [`estimate_mu`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpsParams {
    pub particles: usize,
    pub iterations: usize,
    pub dt: f64,
    /// Substeps per period; derived from the flow period when absent.
    pub substeps: Option<usize>,
    pub seed: u64,
    pub burn_in: usize,
    #[serde(default)]
    pub resample: ResamplePolicy,
}

impl IpsParams {
    pub fn new(particles: usize, iterations: usize, dt: f64, seed: u64) -> Self {
        IpsParams { particles, iterations, dt, substeps: None, seed, burn_in: 0, resample: ResamplePolicy::EveryStep }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_substeps(mut self, m: usize) -> Self {
        self.substeps = Some(m);
        self
    }
}

/// Growth rates of a full run and the resulting eigenvalue estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MuEstimate {
    pub per_substep: Vec<Vec<f64>>,
    pub per_period: Vec<f64>,
    pub mu: f64,
    /// Standard deviation of the post-burn-in `E_k` over the square root of
    /// their count. The `E_k` are correlated, so this is a diagnostic rather
    /// than a confidence interval. NaN when fewer than two periods are kept.
    pub stderr: f64,
    pub n_iters: usize,
    pub burn_in: usize,
}

impl MuEstimate {
    pub fn from_periods(per_substep: Vec<Vec<f64>>, per_period: Vec<f64>, burn_in: usize) -> Result<Self> {
        let n_iters = per_period.len();
        if burn_in >= n_iters {
            return Err(Error::InvalidParameter(format!("burn_in {burn_in} leaves no periods out of {n_iters}")));
        }
        let kept = &per_period[burn_in..];
        let (mu, stderr) = mean_and_stderr(kept);
        if !mu.is_finite() {
            return Err(Error::NonFinite("eigenvalue estimate".into()));
        }
        Ok(MuEstimate { per_substep, per_period, mu, stderr, n_iters, burn_in })
    }

    pub fn stderr_is_finite(&self) -> bool {
        self.stderr.is_finite()
    }

    /// Batch-means standard error over `batches` contiguous blocks of the
    /// kept periods; less optimistic than `stderr` when `E_k` are correlated.
    pub fn batch_stderr(&self, batches: usize) -> f64 {
        let kept = &self.per_period[self.burn_in..];
        let b = batches.max(2).min(kept.len());
        let len = kept.len() / b;
        if len == 0 {
            return f64::NAN;
        }
        let means: Vec<f64> = kept.chunks_exact(len).take(b).map(|c| c.iter().sum::<f64>() / len as f64).collect();
        mean_and_stderr(&means).1
    }
}

/// Mean and `sd / sqrt(n)`, with a sample (n-1) variance.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One row of the per-iteration trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based period index.
    pub k: usize,
    pub e_k: f64,
    /// Running estimate over post-burn-in periods so far (NaN during burn-in).
    pub running_mu: f64,
    pub running_stderr: f64,
}

/// Estimates the principal eigenvalue `μ(λ)` from `N` particles started
/// uniformly on the torus.
pub fn estimate_mu(problem: &KppProblem, params: &IpsParams) -> Result<MuEstimate> {
    estimate_mu_observed(problem, params, |_, _| {})
}

/// [`estimate_mu`] with a callback after every period, receiving the trace
/// record and the ensemble at the period boundary.
pub fn estimate_mu_observed<F>(problem: &KppProblem, params: &IpsParams, observer: F) -> Result<MuEstimate>
where
    F: FnMut(&IterationRecord, &Ensemble),
{
    let source = RngStream::new(params.seed);
    let ens = Ensemble::uniform_from(params.particles, problem.dim(), params.seed, &source)?;
    estimate_mu_from(ens, problem, params, &source, observer).map(|(est, _)| est)
}

/// Core driver: runs `params.iterations` periods starting from `ens` and
/// returns the estimate together with the final ensemble.
pub fn estimate_mu_from<R, F>(
    mut ens: Ensemble,
    problem: &KppProblem,
    params: &IpsParams,
    source: &R,
    mut observer: F,
) -> Result<(MuEstimate, Ensemble)>
where
    R: RandomSource,
    F: FnMut(&IterationRecord, &Ensemble),
{
    problem.validate()?;
    if params.particles < 2 || ens.len() < 2 {
        return Err(Error::InvalidParameter("need at least two particles".into()));
    }
    if params.iterations == 0 {
        return Err(Error::InvalidParameter("need at least one iteration".into()));
    }
    if params.burn_in >= params.iterations {
        return Err(Error::InvalidParameter("burn_in must be smaller than the iteration count".into()));
    }
    let m = substeps_for(&problem.flow, params.dt, params.substeps)?;
    let mut carried = CarriedWeights::default();
    let mut per_substep = Vec::with_capacity(params.iterations);
    let mut per_period = Vec::with_capacity(params.iterations);
    let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0usize);
    for k in 0..params.iterations {
        let res = run_period_with(&mut ens, problem, m, params.dt, source, params.resample, &mut carried)?;
        let (running_mu, running_stderr) = if k >= params.burn_in {
            sum += res.mean;
            sum_sq += res.mean * res.mean;
            count += 1;
            let mean = sum / count as f64;
            let se = if count > 1 {
                ((sum_sq - count as f64 * mean * mean).max(0.0) / (count as f64 - 1.0) / count as f64).sqrt()
            } else {
                f64::NAN
            };
            (mean, se)
        } else {
            (f64::NAN, f64::NAN)
        };
        observer(&IterationRecord { k: k + 1, e_k: res.mean, running_mu, running_stderr }, &ens);
        per_period.push(res.mean);
        per_substep.push(res.per_substep);
    }
    let est = MuEstimate::from_periods(per_substep, per_period, params.burn_in)?;
    Ok((est, ens))
}

/// Normalized occupation histogram of a 2D ensemble on a uniform grid over
/// `[0, 2π)²`. `mass` is row-major with the first coordinate as the row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub bins: usize,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.mass[row * self.bins + col]
    }

    pub fn max(&self) -> f64 {
        self.mass.iter().copied().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Total-variation distance `½ Σ |p - q|`.
    pub fn total_variation(&self, other: &Histogram) -> f64 {
        assert_eq!(self.bins, other.bins, "histograms on different grids");
        0.5 * self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

pub fn empirical_histogram(ens: &Ensemble, bins_per_dim: usize) -> Result<Histogram> {
    if ens.dim() != 2 {
        return Err(Error::Dimension { expected: 2, got: ens.dim() });
    }
    if bins_per_dim < 2 {
        return Err(Error::InvalidParameter("histogram needs at least two bins per dimension".into()));
    }
    let scale = bins_per_dim as f64 / TWO_PI;
    let bin = |x: f64| ((x * scale) as usize).min(bins_per_dim - 1);
    let mut counts = vec![0u64; bins_per_dim * bins_per_dim];
    for x in ens.positions().chunks_exact(2) {
        counts[bin(x[0]) * bins_per_dim + bin(x[1])] += 1;
    }
    let n = ens.len() as f64;
    Ok(Histogram { bins: bins_per_dim, mass: counts.iter().map(|&c| c as f64 / n).collect() })
}
