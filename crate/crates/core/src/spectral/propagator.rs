use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::expm::{apply_plan, ExpPlan, Workspace};
use super::operator::{assemble_c, assemble_l, FourierField, ModeBasis, SpectralOperator};
use crate::error::{Error, Result};
use crate::ips::KppProblem;
use crate::sde::TWO_PI;

/// Tolerance on `M·dt` versus the period.
const PERIOD_TOL: f64 = 1e-10;

/// Time-dependent generator split into a transport part `L(t)` and a
/// reaction part `C(t)`.
pub trait SplitGenerator: Sync {
    fn basis(&self) -> ModeBasis;
    /// Time period; `None` for autonomous generators.
    fn period(&self) -> Option<f64>;
    fn transport(&self, t: f64) -> Result<SpectralOperator>;
    fn reaction(&self, t: f64) -> Result<SpectralOperator>;
}

/// The tilted KPP operator of a planar problem.
#[derive(Clone, Debug)]
pub struct KppGenerator {
    problem: KppProblem,
    basis: ModeBasis,
}

impl KppGenerator {
    pub fn new(problem: &KppProblem, h: usize) -> Result<Self> {
        if problem.dim() != 2 {
            return Err(Error::Dimension { expected: 2, got: problem.dim() });
        }
        Ok(KppGenerator { problem: problem.clone(), basis: ModeBasis::new(h)? })
    }

    pub fn problem(&self) -> &KppProblem {
        &self.problem
    }
}

impl SplitGenerator for KppGenerator {
    fn basis(&self) -> ModeBasis {
        self.basis
    }

    fn period(&self) -> Option<f64> {
        self.problem.flow.period()
    }

    fn transport(&self, t: f64) -> Result<SpectralOperator> {
        assemble_l(&self.problem, t, self.basis.h())
    }

    fn reaction(&self, t: f64) -> Result<SpectralOperator> {
        assemble_c(&self.problem, t, self.basis.h())
    }
}

/// Unit-period test problem with
/// `L(t) = Δ + (sin x₂ cos 2πt, sin x₁ cos 2πt)·∇` and
/// `C(t) = (sin(x₁+x₂) + cos(x₁+x₂)) sin 2πt`.
#[derive(Clone, Copy, Debug)]
pub struct SplittingTestProblem {
    basis: ModeBasis,
}

impl SplittingTestProblem {
    pub fn new(h: usize) -> Result<Self> {
        Ok(SplittingTestProblem { basis: ModeBasis::new(h)? })
    }
}

impl SplitGenerator for SplittingTestProblem {
    fn basis(&self) -> ModeBasis {
        self.basis
    }

    fn period(&self) -> Option<f64> {
        Some(1.0)
    }

    fn transport(&self, t: f64) -> Result<SpectralOperator> {
        let s = (TWO_PI * t).cos();
        let vel = [FourierField::from_fn(|x| x[1].sin() * s), FourierField::from_fn(|x| x[0].sin() * s)];
        Ok(SpectralOperator::transport(self.basis, 1.0, [0.0, 0.0], &vel))
    }

    fn reaction(&self, t: f64) -> Result<SpectralOperator> {
        let s = (TWO_PI * t).sin();
        let field = FourierField::from_fn(|x| ((x[0] + x[1]).sin() + (x[0] + x[1]).cos()) * s);
        Ok(SpectralOperator::multiplication(self.basis, &field))
    }
}

/// Linear map on coefficient vectors.
pub trait LinearMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>>;
}

/// Dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator(pub DMatrix<Complex64>);

impl DenseOperator {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    /// `self · other`
    pub fn compose(&self, other: &DenseOperator) -> DenseOperator {
        DenseOperator(&self.0 * &other.0)
    }
}

impl LinearMap for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok((&self.0 * DVector::from_column_slice(x)).as_slice().to_vec())
    }
}

impl LinearMap for SpectralOperator {
    fn dim(&self) -> usize {
        SpectralOperator::dim(self)
    }

    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut y = vec![Complex64::default(); x.len()];
        SpectralOperator::apply(self, x, &mut y);
        Ok(y)
    }
}

/// How one time step of the propagator is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// `exp(dt L(t_j)) exp(dt C(t_j))`
    LieTrotter,
    /// `exp(dt (L + C)(t_j))`
    Unsplit,
}

/// One step's exponentials, applied right to left.
struct StepOps {
    factors: Vec<(SpectralOperator, ExpPlan)>,
}

impl StepOps {
    fn build<G: SplitGenerator + ?Sized>(gen: &G, scheme: Scheme, t: f64, dt: f64) -> Result<Self> {
        let l = gen.transport(t)?;
        let c = gen.reaction(t)?;
        let ops = match scheme {
            Scheme::LieTrotter => vec![c, l],
            Scheme::Unsplit => vec![l.sum(&c)?],
        };
        let factors = ops
            .into_iter()
            .map(|op| {
                let plan = ExpPlan::new(&op, dt)?;
                Ok((op, plan))
            })
            .collect::<Result<_>>()?;
        Ok(StepOps { factors })
    }

    fn apply(&self, v: &mut [Complex64], work: &mut Workspace) -> Result<()> {
        for (op, plan) in &self.factors {
            apply_plan(op, plan, v, work)?;
        }
        Ok(())
    }
}

/// Product of `steps` exponential steps of length `dt`, starting at `t = 0`,
/// available matrix-free or as a dense matrix.
pub struct Propagator<'a, G: SplitGenerator + ?Sized> {
    gen: &'a G,
    dt: f64,
    steps: usize,
    scheme: Scheme,
    /// Reused by every step when the generator is autonomous.
    frozen: Option<StepOps>,
}

impl<'a, G: SplitGenerator + ?Sized> Propagator<'a, G> {
    pub fn new(gen: &'a G, dt: f64, steps: usize, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
            return Err(Error::InvalidParameter(format!("need dt > 0 and at least one step, got dt={dt}, steps={steps}")));
        }
        let frozen = match gen.period() {
            None => Some(StepOps::build(gen, scheme, 0.0, dt)?),
            Some(_) => None,
        };
        Ok(Propagator { gen, dt, steps, scheme, frozen })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    fn step_ops(&self, j: usize) -> Result<std::borrow::Cow<'_, StepOps>> {
        match &self.frozen {
            Some(ops) => Ok(std::borrow::Cow::Borrowed(ops)),
            None => Ok(std::borrow::Cow::Owned(StepOps::build(self.gen, self.scheme, j as f64 * self.dt, self.dt)?)),
        }
    }

    /// Materializes the propagator column by column.
    pub fn to_dense(&self) -> Result<DenseOperator> {
        let n = self.gen.basis().len();
        let mut m = DMatrix::<Complex64>::identity(n, n);
        for j in 0..self.steps {
            let ops = self.step_ops(j)?;
            m.as_mut_slice()
                .par_chunks_mut(n)
                .map_init(|| Workspace::new(n), |work, col| ops.apply(col, work))
                .collect::<Result<Vec<()>>>()?;
        }
        Ok(DenseOperator(m))
    }
}

impl Clone for StepOps {
    fn clone(&self) -> Self {
        StepOps { factors: self.factors.clone() }
    }
}

impl<G: SplitGenerator + ?Sized> LinearMap for Propagator<'_, G> {
    fn dim(&self) -> usize {
        self.gen.basis().len()
    }

    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut v = x.to_vec();
        let mut work = Workspace::new(v.len());
        for j in 0..self.steps {
            self.step_ops(j)?.apply(&mut v, &mut work)?;
        }
        Ok(v)
    }
}

fn check_horizon<G: SplitGenerator + ?Sized>(gen: &G, dt: f64, m: usize) -> Result<()> {
    if let Some(period) = gen.period() {
        let got = dt * m as f64;
        if (got - period).abs() > PERIOD_TOL {
            return Err(Error::PeriodMismatch { expected: period, got });
        }
    }
    Ok(())
}

fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    let m = (horizon / dt).round();
    if m < 1.0 || (m * dt - horizon).abs() > PERIOD_TOL {
        return Err(Error::InvalidParameter(format!("dt = {dt} does not divide the horizon {horizon}")));
    }
    Ok(m as usize)
}

/// Lie-Trotter product `Π_{j=M-1..0} exp(dt L(t_j)) exp(dt C(t_j))`.
pub fn splitting_propagator<G: SplitGenerator + ?Sized>(gen: &G, dt: f64, m: usize) -> Result<DenseOperator> {
    check_horizon(gen, dt, m)?;
    Propagator::new(gen, dt, m, Scheme::LieTrotter)?.to_dense()
}

/// Fine-step product `Π exp(dt_ref (L + C)(t_j))` over `horizon`, which must
/// be the period for time-dependent generators.
pub fn reference_propagator<G: SplitGenerator + ?Sized>(gen: &G, dt_ref: f64, horizon: f64) -> Result<DenseOperator> {
    let m = steps_for(horizon, dt_ref)?;
    check_horizon(gen, dt_ref, m)?;
    Propagator::new(gen, dt_ref, m, Scheme::Unsplit)?.to_dense()
}

/// Dominant eigenpair of a propagator over time `period`.
#[derive(Clone, Debug)]
pub struct Eigenpair {
    /// `log(ρ) / T`
    pub mu: f64,
    pub rho: Complex64,
    /// Unit 2-norm, with the mean (mode 0) coefficient real and positive when
    /// the vector lives on a [`ModeBasis`].
    pub vector: Vec<Complex64>,
    pub iterations: usize,
    pub residual: f64,
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 20_000;

/// Power iteration from the constant function. The dominant eigenvalue of
/// these positivity-preserving propagators is real and simple.
pub fn principal_eigenvalue<K: LinearMap + ?Sized>(k: &K, period: f64) -> Result<Eigenpair> {
    let n = k.dim();
    if !(period > 0.0) {
        return Err(Error::InvalidParameter(format!("period must be positive, got {period}")));
    }
    // the constant mode sits in the middle of a square basis
    let side = (n as f64).sqrt().round() as usize;
    let centre = if side * side == n { n / 2 } else { 0 };
    let mut v = vec![Complex64::default(); n];
    v[centre] = Complex64::new(1.0, 0.0);
    for it in 1..=POWER_MAX_ITERS {
        let w = k.apply(&v)?;
        let rho = dot(&v, &w);
        let wn = norm2(&w);
        if !(wn.is_finite() && wn > 0.0) {
            return Err(Error::NonFinite("power iteration lost the iterate".into()));
        }
        let residual = norm2(&w.iter().zip(&v).map(|(a, b)| a - rho * b).collect::<Vec<_>>()) / wn;
        v = w.iter().map(|z| z / wn).collect();
        if residual <= POWER_TOL {
            let phase = if v[centre].norm() > 0.0 { v[centre].conj() / v[centre].norm() } else { Complex64::new(1.0, 0.0) };
            v.iter_mut().for_each(|z| *z *= phase);
            return Ok(Eigenpair { mu: rho.norm().ln() / period, rho, vector: v, iterations: it, residual });
        }
    }
    Err(Error::NoConvergence { what: "power iteration for the dominant eigenvalue", iterations: POWER_MAX_ITERS })
}

/// Principal eigenvalue of a planar KPP problem from the Galerkin matrix.
/// Autonomous problems use `exp(T (L + C))` with `T = 2/D`, which separates
/// the spectrum well; periodic ones use the fine-step reference propagator.
pub fn oracle_mu(problem: &KppProblem, h: usize, dt_ref: f64) -> Result<Eigenpair> {
    let gen = KppGenerator::new(problem, h)?;
    match gen.period() {
        None => {
            let horizon = 2.0 / problem.diffusion();
            let k = Propagator::new(&gen, horizon, 1, Scheme::Unsplit)?;
            principal_eigenvalue(&k, horizon)
        }
        Some(period) => {
            let m = steps_for(period, dt_ref)?;
            let k = Propagator::new(&gen, dt_ref, m, Scheme::Unsplit)?;
            principal_eigenvalue(&k, period)
        }
    }
}

/// Eigenvalue of `L + C` with the largest real part, from a dense complex
/// Schur decomposition. Only meaningful for autonomous generators.
pub fn dense_principal_eigenvalue<G: SplitGenerator + ?Sized>(gen: &G) -> Result<Complex64> {
    let a = gen.transport(0.0)?.sum(&gen.reaction(0.0)?)?.to_dense();
    let eig = a
        .eigenvalues()
        .ok_or(Error::NoConvergence { what: "dense Schur decomposition", iterations: 0 })?;
    eig.iter()
        .copied()
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .ok_or(Error::InvalidParameter("empty operator".into()))
}

const SVD_POWER_MAX_ITERS: usize = 5_000;

/// Spectral norm `‖K1 - K2‖₂` by power iteration on `DᴴD`. Falls back to a
/// full singular value decomposition if the top singular values are too
/// close for the iteration to settle.
pub fn operator_error(k1: &DenseOperator, k2: &DenseOperator) -> Result<f64> {
    if k1.0.shape() != k2.0.shape() {
        return Err(Error::Dimension { expected: k1.0.nrows(), got: k2.0.nrows() });
    }
    let d = &k1.0 - &k2.0;
    let n = d.ncols();
    let mut x = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * (i as f64).sin(), 0.05 * (i as f64).cos()));
    let xn = x.norm();
    if xn == 0.0 {
        return Ok(0.0);
    }
    x /= Complex64::new(xn, 0.0);
    let dh = d.adjoint();
    let mut sigma = 0.0f64;
    for _ in 0..SVD_POWER_MAX_ITERS {
        let y = &d * &x;
        let s = y.norm();
        if s == 0.0 {
            return Ok(0.0);
        }
        let z = &dh * y;
        let zn = z.norm();
        x = z / Complex64::new(zn, 0.0);
        let next = zn.sqrt();
        // |σ_{k+1} - σ_k| small relative to σ
        if (next - sigma).abs() <= 1e-13 * next {
            return Ok(next);
        }
        sigma = next;
    }
    Ok(d.singular_values().max())
}

/// `‖K^{H,dt} − K̃^{H,dt_ref}‖` for each `dt`, reusing one reference
/// propagator.
pub fn splitting_errors<G: SplitGenerator + ?Sized>(gen: &G, dts: &[f64], dt_ref: f64, horizon: f64) -> Result<Vec<(f64, f64)>> {
    let reference = reference_propagator(gen, dt_ref, horizon)?;
    dts.iter()
        .map(|&dt| {
            let m = steps_for(horizon, dt)?;
            let split = splitting_propagator(gen, dt, m)?;
            Ok((dt, operator_error(&split, &reference)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{build_flow, Flow, FlowKind, FlowSpec};

    fn problem(a: f64, lambda: f64) -> KppProblem {
        KppProblem::new(Flow::simple(FlowKind::Cellular2D, a).unwrap(), vec![1.0, 0.0], lambda).unwrap()
    }

    #[test]
    fn heat_semigroup_diagonal() {
        let gen = KppGenerator::new(&problem(0.0, 0.0).with_fprime0(0.0).unwrap(), 4).unwrap();
        let k = splitting_propagator(&gen, 0.25, 4).unwrap();
        let b = gen.basis();
        for i in 0..b.len() {
            let q = b.mode(i);
            let expected = (-((q[0] * q[0] + q[1] * q[1]) as f64)).exp();
            assert!((k.0[(i, i)].re - expected).abs() < 1e-13);
        }
        assert!((k.0.sum() - k.0.diagonal().sum()).norm() < 1e-13);
    }

    #[test]
    fn commuting_case_splitting_is_exact() {
        // constant potential c0 = 0.36 + 1, still flow
        let p = problem(0.0, 0.6);
        let gen = KppGenerator::new(&p, 5).unwrap();
        let split = splitting_propagator(&gen, 0.5, 2).unwrap();
        let reference = reference_propagator(&gen, 1.0 / 64.0, 1.0).unwrap();
        assert!(operator_error(&split, &reference).unwrap() < 1e-10);
        let eig = principal_eigenvalue(&split, 1.0).unwrap();
        assert!((eig.mu - 1.36).abs() < 1e-12, "{}", eig.mu);
    }

    #[test]
    fn homogeneous_oracle_value() {
        let eig = oracle_mu(&problem(0.0, 1.0), 6, 1.0 / 64.0).unwrap();
        assert!((eig.mu - 2.0).abs() < 1e-12);
        assert!(eig.rho.im.abs() < 1e-10 * eig.rho.norm());
    }

    #[test]
    fn autonomous_reference_is_a_semigroup() {
        let gen = KppGenerator::new(&problem(1.0, 0.35), 5).unwrap();
        let one = reference_propagator(&gen, 1.0 / 8.0, 0.5).unwrap();
        let two = reference_propagator(&gen, 1.0 / 4.0, 1.0).unwrap();
        let sq = one.compose(&one);
        let scale = two.0.norm();
        assert!(operator_error(&sq, &two).unwrap() < 1e-9 * scale);
    }

    #[test]
    fn operator_error_examples() {
        let gen = KppGenerator::new(&problem(1.0, 0.35), 3).unwrap();
        let k = splitting_propagator(&gen, 0.5, 1).unwrap();
        assert_eq!(operator_error(&k, &k).unwrap(), 0.0);
        let n = k.0.nrows();
        let shifted = DenseOperator(&k.0 + DMatrix::identity(n, n) * Complex64::new(1e-3, 0.0));
        assert!((operator_error(&shifted, &k).unwrap() - 1e-3).abs() < 1e-13);
    }

    #[test]
    fn period_is_enforced() {
        let spec = FlowSpec::new(FlowKind::UnsteadyCellular2D, 1.0).with_delta(0.5);
        let p = KppProblem::new(build_flow(&spec).unwrap(), vec![1.0, 0.0], 0.5).unwrap();
        let gen = KppGenerator::new(&p, 3).unwrap();
        assert!(matches!(splitting_propagator(&gen, 0.25, 3), Err(Error::PeriodMismatch { .. })));
        assert!(reference_propagator(&gen, 0.3, 1.0).is_err());
        assert!(reference_propagator(&gen, 0.25, 2.0).is_err());
    }

    #[test]
    fn steady_eigenvalue_matches_dense_schur() {
        let p = problem(1.0, 0.35);
        let gen = KppGenerator::new(&p, 8).unwrap();
        let dense = dense_principal_eigenvalue(&gen).unwrap();
        let eig = oracle_mu(&p, 8, 0.0).unwrap();
        assert!(dense.im.abs() < 1e-10);
        assert!((eig.mu - dense.re).abs() < 1e-10, "{} {}", eig.mu, dense.re);
        assert!((eig.mu - 1.1354768805884576).abs() < 1e-9, "{}", eig.mu);
        let b = gen.basis();
        assert!(b.is_conjugate_symmetric(&eig.vector, 1e-10));
    }

    #[test]
    fn test_problem_is_periodic() {
        let gen = SplittingTestProblem::new(2).unwrap();
        assert_eq!(gen.period(), Some(1.0));
        let l0 = gen.transport(0.0).unwrap();
        let l1 = gen.transport(1.0).unwrap();
        assert!((l0.to_dense() - l1.to_dense()).norm() < 1e-12);
        // the reaction vanishes at t = 0
        assert_eq!(gen.reaction(0.0).unwrap().nnz(), 0);
    }
}
