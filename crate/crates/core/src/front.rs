//! Front speeds from eigenvalue curves: `c* = inf_λ μ(λ)/λ`.
//!
//! A curve of `μ(λ)` samples comes from a [`MuBackend`]. The ratio is fitted
//! with `aλ + b/λ + c`, whose minimum is available in closed form, and the
//! smallest sample is used when the fit is not convex.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowKind;
use crate::ips::{estimate_mu, IpsParams, KppProblem};
use crate::rng::derive_seed;
use crate::spectral::oracle_mu;

/// Samples of `μ(λ)` on an increasing grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuCurve {
    pub lambdas: Vec<f64>,
    pub mu: Vec<f64>,
    pub stderr: Vec<f64>,
    pub ratio: Vec<f64>,
}

impl MuCurve {
    /// Builds a curve from `(λ, μ, stderr)` triples in any order.
    pub fn from_points(mut points: Vec<(f64, f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("a curve needs at least one point".into()));
        }
        if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.0.is_finite()) || !p.1.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad curve point λ={}, μ={}", p.0, p.1)));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("duplicate λ in curve".into()));
        }
        Ok(MuCurve {
            lambdas: points.iter().map(|p| p.0).collect(),
            mu: points.iter().map(|p| p.1).collect(),
            stderr: points.iter().map(|p| p.2).collect(),
            ratio: points.iter().map(|p| p.1 / p.0).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Position of a curve point inside a sweep, used to derive its seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub sigma_index: u64,
    pub lambda_index: u64,
}

/// Anything that can produce `(μ, stderr)` for a problem.
pub trait MuBackend: Sync {
    fn mu(&self, problem: &KppProblem, cell: Cell) -> Result<(f64, f64)>;
}

/// Particle estimates; each cell runs with its own seed derived from
/// `(params.seed, σ index, λ index)`.
#[derive(Clone, Debug)]
pub struct IpsBackend {
    pub params: IpsParams,
}

impl MuBackend for IpsBackend {
    fn mu(&self, problem: &KppProblem, cell: Cell) -> Result<(f64, f64)> {
        let mut params = self.params.clone();
        params.seed = derive_seed(self.params.seed, &[cell.sigma_index, cell.lambda_index]);
        let est = estimate_mu(problem, &params)?;
        Ok((est.mu, est.stderr))
    }
}

/// Fourier-Galerkin eigenvalues (planar problems only).
#[derive(Clone, Copy, Debug)]
pub struct OracleBackend {
    pub h: usize,
    pub dt_ref: f64,
}

impl MuBackend for OracleBackend {
    fn mu(&self, problem: &KppProblem, _: Cell) -> Result<(f64, f64)> {
        Ok((oracle_mu(problem, self.h, self.dt_ref)?.mu, 0.0))
    }
}

/// Backend wrapping a closure, for synthetic curves.
pub struct FnBackend<F>(pub F);

impl<F> MuBackend for FnBackend<F>
where
    F: Fn(&KppProblem, Cell) -> Result<(f64, f64)> + Sync,
{
    fn mu(&self, problem: &KppProblem, cell: Cell) -> Result<(f64, f64)> {
        (self.0)(problem, cell)
    }
}

/// Evaluates `μ` at every λ of the grid. Cells are independent and run
/// concurrently; results keep grid order.
pub fn mu_curve<B: MuBackend + ?Sized>(problem: &KppProblem, lambdas: &[f64], backend: &B, sigma_index: u64) -> Result<MuCurve> {
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter("λ grid must be positive".into()));
    }
    let points = lambdas
        .par_iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let p = problem.at_lambda(lambda)?;
            let (mu, se) = backend.mu(&p, Cell { sigma_index, lambda_index: j as u64 })?;
            Ok((lambda, mu, se))
        })
        .collect::<Result<Vec<_>>>()?;
    MuCurve::from_points(points)
}

/// Coefficients of `aλ + b/λ + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Euclidean norm of the (weighted) residual.
    pub residual: f64,
}

impl RationalFit {
    pub fn eval(&self, lambda: f64) -> f64 {
        self.a * lambda + self.b / lambda + self.c
    }

    /// Closed-form minimizer and minimum, when both `a` and `b` are positive.
    pub fn minimum(&self) -> Option<(f64, f64)> {
        if self.a > 0.0 && self.b > 0.0 {
            Some(((self.b / self.a).sqrt(), self.c + 2.0 * (self.a * self.b).sqrt()))
        } else {
            None
        }
    }
}

/// Least-squares fit of the ratio in the basis `{λ, 1/λ, 1}`.
pub fn fit_rational(curve: &MuCurve) -> Result<RationalFit> {
    fit_weighted(curve, &vec![1.0; curve.len()])
}

/// [`fit_rational`] with rows weighted by `λ / stderr` (the standard error
/// of the ratio). Points without a positive, finite stderr get the median
/// weight.
pub fn fit_rational_weighted(curve: &MuCurve) -> Result<RationalFit> {
    let raw: Vec<Option<f64>> = curve
        .lambdas
        .iter()
        .zip(&curve.stderr)
        .map(|(l, s)| (s.is_finite() && *s > 0.0).then(|| l / s))
        .collect();
    let mut known: Vec<f64> = raw.iter().flatten().copied().collect();
    known.sort_by(f64::total_cmp);
    let fallback = known.get(known.len() / 2).copied().unwrap_or(1.0);
    fit_weighted(curve, &raw.iter().map(|w| w.unwrap_or(fallback)).collect::<Vec<_>>())
}

fn fit_weighted(curve: &MuCurve, w: &[f64]) -> Result<RationalFit> {
    let n = curve.len();
    if n < 3 {
        return Err(Error::RankDeficient(format!("{n} points cannot determine three coefficients")));
    }
    let design = DMatrix::from_fn(n, 3, |i, j| {
        let l = curve.lambdas[i];
        w[i] * [l, 1.0 / l, 1.0][j]
    });
    let rhs = DVector::from_fn(n, |i, _| w[i] * curve.ratio[i]);
    let svd = design.clone().svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::RankDeficient(format!("singular values {smax:e}, {smin:e}")));
    }
    let x = svd.solve(&rhs, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let residual = (&design * &x - &rhs).norm();
    Ok(RationalFit { a: x[0], b: x[1], c: x[2], residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedMethod {
    GridMin,
    RationalFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontSpeedResult {
    pub fit: Option<RationalFit>,
    pub lambda_star: f64,
    pub c_star: f64,
    pub method: SpeedMethod,
}

/// Smallest sampled ratio and where it occurs.
pub fn grid_min(curve: &MuCurve) -> (f64, f64) {
    curve
        .lambdas
        .iter()
        .zip(&curve.ratio)
        .map(|(&l, &r)| (l, r))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("curves are never empty")
}

fn speed_from(curve: &MuCurve, fit: Option<RationalFit>) -> FrontSpeedResult {
    match fit.and_then(|f| f.minimum().map(|m| (f, m))) {
        Some((f, (lambda_star, c_star))) => {
            FrontSpeedResult { fit: Some(f), lambda_star, c_star, method: SpeedMethod::RationalFit }
        }
        None => {
            let (lambda_star, c_star) = grid_min(curve);
            FrontSpeedResult { fit, lambda_star, c_star, method: SpeedMethod::GridMin }
        }
    }
}

/// Minimum of the fitted ratio when the fit is convex, otherwise the grid
/// minimum.
pub fn front_speed(curve: &MuCurve) -> FrontSpeedResult {
    speed_from(curve, fit_rational(curve).ok())
}

pub fn front_speed_weighted(curve: &MuCurve) -> FrontSpeedResult {
    speed_from(curve, fit_rational_weighted(curve).ok())
}

/// One σ of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub c_star_tilde: f64,
    pub lambda_star: f64,
    pub method: SpeedMethod,
    pub curve: MuCurve,
}

/// Rescaled front speed `c̃*(σ)` for every σ. `base` carries the flow at
/// unit amplitude; `grids[s]` is the λ grid used at `sigmas[s]`.
pub fn sweep_sigma<B: MuBackend + ?Sized>(base: &KppProblem, sigmas: &[f64], grids: &[Vec<f64>], backend: &B, weighted: bool) -> Result<Vec<SweepRow>> {
    if sigmas.len() != grids.len() {
        return Err(Error::Dimension { expected: sigmas.len(), got: grids.len() });
    }
    if let Some(s) = sigmas.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
        return Err(Error::InvalidParameter(format!("σ must lie in (0, 1], got {s}")));
    }
    sigmas
        .iter()
        .zip(grids)
        .enumerate()
        .map(|(i, (&sigma, grid))| {
            let problem = base.clone().with_sigma(Some(sigma))?;
            let curve = mu_curve(&problem, grid, backend, i as u64)?;
            let speed = if weighted { front_speed_weighted(&curve) } else { front_speed(&curve) };
            Ok(SweepRow { sigma, c_star_tilde: speed.c_star, lambda_star: speed.lambda_star, method: speed.method, curve })
        })
        .collect()
}

/// Optimal λ of the steady cellular flow at unit amplitude for
/// σ = 1, 1/2, …, 1/32, from the Fourier-Galerkin solver.
const CELLULAR_LAMBDA_STAR: [(f64, f64); 6] =
    [(1.0, 0.998), (0.5, 0.975), (0.25, 0.840), (0.125, 0.595), (0.0625, 0.440), (0.03125, 0.346)];

/// Centre of the default λ grid. Cellular flows interpolate a table of
/// computed minimizers in `log σ`; other flows use `0.55 σ^0.3`, a rough
/// guess that configs should override.
pub fn default_lambda_center(kind: FlowKind, sigma: f64) -> f64 {
    match kind {
        FlowKind::Cellular2D | FlowKind::UnsteadyCellular2D | FlowKind::Mixing2D => {
            let ls = sigma.log2();
            let table = &CELLULAR_LAMBDA_STAR;
            if sigma >= table[0].0 {
                return table[0].1;
            }
            for w in table.windows(2) {
                let (s0, l0) = w[0];
                let (s1, l1) = w[1];
                if sigma >= s1 {
                    let f = (ls - s0.log2()) / (s1.log2() - s0.log2());
                    return l0 + f * (l1 - l0);
                }
            }
            let (s_last, l_last) = table[table.len() - 1];
            l_last * (sigma / s_last).powf(0.3)
        }
        _ => 0.55 * sigma.powf(0.3),
    }
}

/// `points` values evenly spaced over `[0.6, 1.6] × center`.
pub fn lambda_grid_around(center: f64, points: usize) -> Vec<f64> {
    let points = points.max(3);
    (0..points).map(|j| center * (0.6 + j as f64 / (points - 1) as f64)).collect()
}

/// Ordinary least squares of `log c̃` on `log σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub sigmas: Vec<f64>,
    pub c_tilde: Vec<f64>,
    pub alpha: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn powerlaw_fit(sigmas: &[f64], values: &[f64]) -> Result<PowerLawFit> {
    if sigmas.len() != values.len() {
        return Err(Error::Dimension { expected: sigmas.len(), got: values.len() });
    }
    if sigmas.len() < 2 {
        return Err(Error::InvalidParameter("a power law needs at least two points".into()));
    }
    if sigmas.iter().chain(values).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("power-law data must be positive".into()));
    }
    let x: Vec<f64> = sigmas.iter().map(|s| s.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::RankDeficient("all σ are equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let alpha = sxy / sxx;
    let intercept = my - alpha * mx;
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - alpha * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(PowerLawFit { sigmas: sigmas.to_vec(), c_tilde: values.to_vec(), alpha, intercept, r2 })
}

/// Front exponent implied by an effective-diffusivity exponent through
/// `c*(A) ~ sqrt(D^E(A))`: with `D^E ~ A^αD`, `c̃*(σ) ~ σ^(1 - αD/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiffusivityReport {
    pub alpha_front: f64,
    pub alpha_diff: f64,
    pub alpha_pred: f64,
    pub deviation: f64,
}

pub fn diffusivity_relation_check(alpha_front: f64, alpha_diff: f64) -> DiffusivityReport {
    let alpha_pred = 1.0 - alpha_diff / 2.0;
    DiffusivityReport { alpha_front, alpha_diff, alpha_pred, deviation: (alpha_front - alpha_pred).abs() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Flow;

    fn curve_of(f: impl Fn(f64) -> f64, lambdas: &[f64]) -> MuCurve {
        MuCurve::from_points(lambdas.iter().map(|&l| (l, f(l) * l, 0.0)).collect()).unwrap()
    }

    fn still(lambda: f64) -> KppProblem {
        KppProblem::new(Flow::simple(FlowKind::Cellular2D, 0.0).unwrap(), vec![1.0, 0.0], lambda).unwrap()
    }

    fn cellular() -> KppProblem {
        KppProblem::new(Flow::simple(FlowKind::Cellular2D, 1.0).unwrap(), vec![1.0, 0.0], 0.5).unwrap()
    }

    #[test]
    fn homogeneous_curve_and_speed() {
        let backend = IpsBackend { params: IpsParams::new(100, 3, 0.1, 4) };
        let curve = mu_curve(&still(1.0), &[0.5, 1.0, 2.0], &backend, 0).unwrap();
        assert_eq!(curve.ratio, vec![2.5, 2.0, 2.5]);
        let speed = front_speed(&curve);
        assert_eq!(speed.method, SpeedMethod::RationalFit);
        assert!((speed.c_star - 2.0).abs() < 1e-9);
        assert!((speed.lambda_star - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rational_fit_recovers_coefficients() {
        let grid = [0.3, 0.5, 0.9, 1.4, 2.0];
        let f = fit_rational(&curve_of(|l| l + 1.0 / l, &grid)).unwrap();
        assert!((f.a - 1.0).abs() < 1e-10 && (f.b - 1.0).abs() < 1e-10 && f.c.abs() < 1e-10);
        let (ls, cs) = f.minimum().unwrap();
        assert!((ls - 1.0).abs() < 1e-10 && (cs - 2.0).abs() < 1e-10);
        let f = fit_rational(&curve_of(|l| 2.0 * l + 0.5 / l + 3.0, &grid)).unwrap();
        assert!((f.a - 2.0).abs() < 1e-10 && (f.b - 0.5).abs() < 1e-10 && (f.c - 3.0).abs() < 1e-10);
    }

    #[test]
    fn noisy_fit_is_close() {
        let grid: Vec<f64> = (0..15).map(|j| 0.4 + 0.1 * j as f64).collect();
        let stream = crate::rng::RngStream::new(5);
        let noisy = MuCurve::from_points(
            grid.iter()
                .enumerate()
                .map(|(j, &l)| {
                    let mut z = [0.0];
                    crate::rng::RandomSource::normals(&stream, 0, 0, j as u64, &mut z);
                    (l, (l + 1.0 / l + 1e-3 * z[0]) * l, 1e-3 * l)
                })
                .collect(),
        )
        .unwrap();
        for f in [fit_rational(&noisy).unwrap(), fit_rational_weighted(&noisy).unwrap()] {
            assert!((f.a - 1.0).abs() < 1e-2 && (f.b - 1.0).abs() < 1e-2 && f.c.abs() < 1e-2, "{f:?}");
        }
    }

    #[test]
    fn degenerate_grids() {
        let two = curve_of(|l| l + 1.0 / l, &[0.5, 1.0]);
        assert!(matches!(fit_rational(&two), Err(Error::RankDeficient(_))));
        let speed = front_speed(&two);
        assert_eq!(speed.method, SpeedMethod::GridMin);
        assert_eq!(speed.c_star, 2.0);
        // concave data: no interior minimum of the fit
        let concave = curve_of(|l| 5.0 - l - 1.0 / l, &[0.5, 1.0, 2.0, 3.0]);
        let speed = front_speed(&concave);
        assert_eq!(speed.method, SpeedMethod::GridMin);
        assert_eq!(speed.lambda_star, 3.0);
        assert!(MuCurve::from_points(vec![(1.0, 1.0, 0.0), (1.0, 2.0, 0.0)]).is_err());
        assert!(MuCurve::from_points(vec![]).is_err());
    }

    #[test]
    fn speed_ignores_grid_order() {
        let pts = vec![(0.5, 1.3, 0.0), (1.7, 3.9, 0.0), (0.9, 2.0, 0.0), (1.2, 2.6, 0.0)];
        let mut rev = pts.clone();
        rev.reverse();
        let a = front_speed(&MuCurve::from_points(pts).unwrap());
        let b = front_speed(&MuCurve::from_points(rev).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn powerlaw_examples() {
        let s = [1.0, 0.5, 0.25, 0.125];
        let f = powerlaw_fit(&s, &s.map(|x: f64| x.powf(0.5))).unwrap();
        assert!((f.alpha - 0.5).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let f = powerlaw_fit(&s, &s.map(|x: f64| 3.0 * x.powf(0.75))).unwrap();
        assert!((f.alpha - 0.75).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(powerlaw_fit(&s, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(powerlaw_fit(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn diffusivity_examples() {
        assert_eq!(diffusivity_relation_check(0.74, 0.5).alpha_pred, 0.75);
        assert!((diffusivity_relation_check(0.43, 1.13).alpha_pred - 0.435).abs() < 1e-15);
        assert_eq!(diffusivity_relation_check(1.0, 0.0).alpha_pred, 1.0);
        assert!((diffusivity_relation_check(0.74, 0.5).deviation - 0.01).abs() < 1e-15);
    }

    #[test]
    fn synthetic_sweep_recovers_exponent() {
        // μ(λ) = σ^0.5 (λ² + 1)/2 gives c̃* = σ^0.5 at λ* = 1
        let backend = FnBackend(|p: &KppProblem, _| {
            let s = p.sigma.unwrap();
            Ok((s.sqrt() * (p.lambda * p.lambda + 1.0) / 2.0, 0.0))
        });
        let sigmas = [1.0, 0.5, 0.25, 0.125];
        let grids = vec![vec![0.5, 0.8, 1.0, 1.5, 2.0]; 4];
        let rows = sweep_sigma(&cellular(), &sigmas, &grids, &backend, false).unwrap();
        let fit = powerlaw_fit(&sigmas, &rows.iter().map(|r| r.c_star_tilde).collect::<Vec<_>>()).unwrap();
        assert!((fit.alpha - 0.5).abs() < 1e-10);
        assert!(sweep_sigma(&cellular(), &[2.0], &grids[..1], &backend, false).is_err());
    }

    #[test]
    fn homogeneous_unit_sigma_speed() {
        let backend = OracleBackend { h: 4, dt_ref: 0.0 };
        let rows = sweep_sigma(&still(1.0), &[1.0], &[vec![0.5, 0.8, 1.0, 1.3, 2.0]], &backend, false).unwrap();
        assert!((rows[0].c_star_tilde - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rescaled_oracle_matches_amplitude_scaling() {
        // μ̃(λ; σ) = μ(λ; A = 1/σ) / A
        let oracle = OracleBackend { h: 10, dt_ref: 0.0 };
        let cell = Cell { sigma_index: 0, lambda_index: 0 };
        let rescaled = cellular().at_lambda(0.7).unwrap().with_sigma(Some(0.5)).unwrap();
        let strong = KppProblem::new(Flow::simple(FlowKind::Cellular2D, 2.0).unwrap(), vec![1.0, 0.0], 0.7).unwrap();
        let (a, _) = oracle.mu(&rescaled, cell).unwrap();
        let (b, _) = oracle.mu(&strong, cell).unwrap();
        assert!((a - b / 2.0).abs() < 1e-10, "{a} {b}");
    }

    #[test]
    fn default_grids() {
        assert_eq!(default_lambda_center(FlowKind::Cellular2D, 1.0), 0.998);
        assert_eq!(default_lambda_center(FlowKind::Cellular2D, 0.25), 0.84);
        let mid = default_lambda_center(FlowKind::Cellular2D, 0.25f64.sqrt() * 0.125f64.sqrt());
        assert!((mid - 0.7175).abs() < 1e-12);
        let g = lambda_grid_around(1.0, 7);
        assert_eq!(g.len(), 7);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[6] - 1.6).abs() < 1e-15);
    }
}
