//! Euler-Maruyama propagation of particle ensembles on the torus.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{Flow, FrozenFlow};
use crate::rng::{RandomSource, RngStream};

pub const TWO_PI: f64 = 2.0 * PI;

/// Particles handled per parallel work item. Fixed, so partial sums and
/// random keys never depend on the number of worker threads.
pub(crate) const CHUNK: usize = 2048;

/// `x mod 2π` in `[0, 2π)`.
#[inline]
pub fn wrap_coord(x: f64) -> f64 {
    let r = x.rem_euclid(TWO_PI);
    // rem_euclid rounds tiny negative inputs up to exactly 2π
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

/// Componentwise reduction of `x` onto `[0, 2π)^d`.
pub fn wrap_torus(x: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("cannot wrap coordinate {bad}")));
    }
    Ok(x.iter().map(|&v| wrap_coord(v)).collect())
}

/// `N` particles on the d-torus, stored row-major and always wrapped, plus the
/// counters that key their random draws.
#[derive(Clone, Debug)]
pub struct Ensemble {
    dim: usize,
    positions: Vec<f64>,
    rng: RngStream,
    iteration: u64,
    substep: u64,
}

impl Ensemble {
    /// Draws `n` particles i.i.d. uniform on the torus.
    pub fn uniform(n: usize, dim: usize, seed: u64) -> Result<Self> {
        let rng = RngStream::new(seed);
        Self::uniform_from(n, dim, seed, &rng)
    }

    pub fn uniform_from<R: RandomSource>(n: usize, dim: usize, seed: u64, source: &R) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("ensemble needs at least one particle".into()));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("unsupported dimension {dim}")));
        }
        let mut positions = vec![0.0; n * dim];
        positions.par_chunks_mut(dim).enumerate().for_each(|(p, x)| {
            source.initial_uniforms(p as u64, x);
            for v in x.iter_mut() {
                *v = wrap_coord(*v * TWO_PI);
            }
        });
        Ok(Ensemble { dim, positions, rng: RngStream::new(seed), iteration: 0, substep: 0 })
    }

    /// Builds an ensemble from explicit coordinates (wrapped on entry).
    pub fn from_positions(dim: usize, positions: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 || positions.is_empty() || positions.len() % dim != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates do not form particles of dimension {dim}",
                positions.len()
            )));
        }
        let positions = wrap_torus(&positions)?;
        Ok(Ensemble { dim, positions, rng: RngStream::new(seed), iteration: 0, substep: 0 })
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, p: usize) -> &[f64] {
        &self.positions[p * self.dim..(p + 1) * self.dim]
    }

    pub fn rng(&self) -> &RngStream {
        &self.rng
    }

    /// Current period iteration `k`.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Current substep `i` within the period.
    pub fn substep_index(&self) -> u64 {
        self.substep
    }

    pub(crate) fn positions_mut(&mut self) -> &mut Vec<f64> {
        &mut self.positions
    }

    pub(crate) fn advance_substep(&mut self) {
        self.substep += 1;
    }

    pub(crate) fn finish_period(&mut self) {
        self.iteration += 1;
        self.substep = 0;
    }
}

/// One Euler-Maruyama move of a single particle, followed by wrapping.
/// Returns `false` if the new position is not finite.
#[inline]
pub(crate) fn em_move(
    frozen: &FrozenFlow,
    shift: &[f64],
    noise_scale: f64,
    dt: f64,
    z: &[f64],
    x: &mut [f64],
) -> bool {
    let d = x.len();
    let mut v = [0.0; 3];
    frozen.eval(x, &mut v[..d]);
    let mut ok = true;
    for j in 0..d {
        let y = x[j] + (shift[j] + v[j]) * dt + noise_scale * z[j];
        ok &= y.is_finite();
        x[j] = wrap_coord(y);
    }
    ok
}

fn check_step(ens: &Ensemble, flow: &Flow, drift_shift: &[f64], kappa: f64, dt: f64) -> Result<()> {
    if flow.dim() != ens.dim {
        return Err(Error::Dimension { expected: ens.dim, got: flow.dim() });
    }
    if drift_shift.len() != ens.dim {
        return Err(Error::Dimension { expected: ens.dim, got: drift_shift.len() });
    }
    if !(dt > 0.0) || !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("need dt > 0 and kappa > 0, got dt={dt}, kappa={kappa}")));
    }
    Ok(())
}

/// Moves every particle by `(drift_shift + v(t, x)) dt + sqrt(2 κ dt) ω` and
/// wraps the result. Draws come from the ensemble's own stream keyed by its
/// current `(iteration, substep)`; the substep counter is then incremented.
pub fn em_step(ens: &mut Ensemble, flow: &Flow, drift_shift: &[f64], kappa: f64, t: f64, dt: f64) -> Result<()> {
    let rng = ens.rng;
    em_step_with(ens, flow, drift_shift, kappa, t, dt, &rng)
}

/// [`em_step`] with an explicit source of Gaussian increments.
pub fn em_step_with<R: RandomSource>(
    ens: &mut Ensemble,
    flow: &Flow,
    drift_shift: &[f64],
    kappa: f64,
    t: f64,
    dt: f64,
    source: &R,
) -> Result<()> {
    check_step(ens, flow, drift_shift, kappa, dt)?;
    let d = ens.dim;
    let (k, i) = (ens.iteration, ens.substep);
    let frozen = flow.frozen(t);
    let noise_scale = (2.0 * kappa * dt).sqrt();
    let ok = ens
        .positions
        .par_chunks_mut(CHUNK * d)
        .enumerate()
        .map(|(c, block)| {
            let mut z = [0.0; 3];
            let mut ok = true;
            for (j, x) in block.chunks_mut(d).enumerate() {
                let p = (c * CHUNK + j) as u64;
                source.normals(k, i, p, &mut z[..d]);
                ok &= em_move(&frozen, drift_shift, noise_scale, dt, &z[..d], x);
            }
            ok
        })
        .reduce(|| true, |a, b| a && b);
    if !ok {
        return Err(Error::NonFinite(format!("Euler-Maruyama step at t={t}, dt={dt}")));
    }
    ens.substep += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowKind;

    struct ZeroNoise;

    impl RandomSource for ZeroNoise {
        fn normals(&self, _: u64, _: u64, _: u64, out: &mut [f64]) {
            out.fill(0.0);
        }
        fn resample_uniform(&self, _: u64, _: u64, _: u64) -> f64 {
            0.0
        }
        fn initial_uniforms(&self, _: u64, out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    fn still() -> Flow {
        Flow::simple(FlowKind::Cellular2D, 0.0).unwrap()
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_torus(&[TWO_PI, -0.1]).unwrap(), vec![0.0, TWO_PI - 0.1]);
        assert_eq!(wrap_torus(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        let w = wrap_torus(&[7.0 * PI, 0.0]).unwrap();
        assert!((w[0] - PI).abs() < 1e-14 && w[1] == 0.0);
        assert_eq!(wrap_coord(-1e-300), 0.0);
        assert!(wrap_torus(&[f64::NAN]).is_err());
    }

    #[test]
    fn zero_drift_zero_noise_is_identity() {
        let mut ens = Ensemble::from_positions(2, vec![0.5, 1.0, 6.0, 3.0], 1).unwrap();
        let before = ens.positions().to_vec();
        em_step_with(&mut ens, &still(), &[0.0, 0.0], 1.0, 0.0, 0.37, &ZeroNoise).unwrap();
        assert_eq!(ens.positions(), &before[..]);
        assert_eq!(ens.substep_index(), 1);
    }

    #[test]
    fn deterministic_drift_shifts_and_wraps() {
        let mut ens = Ensemble::from_positions(2, vec![6.0, 1.0], 1).unwrap();
        em_step_with(&mut ens, &still(), &[1.0, 0.0], 1.0, 0.0, 0.5, &ZeroNoise).unwrap();
        assert!((ens.positions()[0] - (6.5 - TWO_PI)).abs() < 1e-15);
        assert_eq!(ens.positions()[1], 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        let mut ens = Ensemble::uniform(4, 2, 1).unwrap();
        assert!(em_step(&mut ens, &still(), &[0.0], 1.0, 0.0, 0.1).is_err());
        assert!(em_step(&mut ens, &still(), &[0.0, 0.0], 1.0, 0.0, 0.0).is_err());
        let abc = Flow::simple(FlowKind::ABC3D, 1.0).unwrap();
        assert!(em_step(&mut ens, &abc, &[0.0, 0.0, 0.0], 1.0, 0.0, 0.1).is_err());
        assert!(em_step(&mut ens, &still(), &[f64::INFINITY, 0.0], 1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn heat_kernel_moments() {
        // One step from the centre of the box: displacements stay far from the
        // wrap boundary, so the stored coordinates give the unwrapped moves.
        let n = 1_000_000;
        let dt = 0.01;
        let mut ens = Ensemble::from_positions(2, vec![PI; 2 * n], 99).unwrap();
        em_step(&mut ens, &still(), &[0.0, 0.0], 1.0, 0.0, dt).unwrap();
        for j in 0..2 {
            let disp: Vec<f64> = ens.positions().iter().skip(j).step_by(2).map(|x| x - PI).collect();
            let mean = disp.iter().sum::<f64>() / n as f64;
            let var = disp.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let target = 2.0 * dt;
            assert!(mean.abs() < 4.0 * (target / n as f64).sqrt(), "mean {mean}");
            // var of the sample second moment: 2 target^2 / n
            assert!((var - target).abs() < 4.0 * target * (2.0 / n as f64).sqrt(), "var {var}");
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let flow = Flow::simple(FlowKind::ABC3D, 1.0).unwrap();
        let run = || {
            let mut ens = Ensemble::uniform(5000, 3, 17).unwrap();
            for s in 0..5 {
                em_step(&mut ens, &flow, &[0.3, 0.0, 0.0], 1.0, s as f64 * 0.1, 0.1).unwrap();
            }
            ens.positions().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.iter().all(|&x| (0.0..TWO_PI).contains(&x)));
    }
}
