use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ips::KppProblem;
use crate::sde::TWO_PI;

/// Sampling grid per dimension used to recover field coefficients. Exact for
/// trigonometric polynomials of degree up to 3 in each coordinate.
const FIELD_GRID: usize = 8;

/// Square set of modes `-H..=H` in each of the two coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModeBasis {
    h: usize,
}

impl ModeBasis {
    pub fn new(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::InvalidParameter("spectral truncation H must be at least 1".into()));
        }
        Ok(ModeBasis { h })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn side(&self) -> usize {
        2 * self.h + 1
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position of mode `k`, if it lies in the box.
    #[inline]
    pub fn index(&self, k: [i64; 2]) -> Option<usize> {
        let h = self.h as i64;
        if k[0].abs() > h || k[1].abs() > h {
            return None;
        }
        Some(((k[0] + h) as usize) * self.side() + (k[1] + h) as usize)
    }

    #[inline]
    pub fn mode(&self, idx: usize) -> [i64; 2] {
        let h = self.h as i64;
        [(idx / self.side()) as i64 - h, (idx % self.side()) as i64 - h]
    }

    /// Coefficient vector of the constant function 1.
    pub fn constant(&self) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); self.len()];
        v[self.index([0, 0]).unwrap()] = Complex64::new(1.0, 0.0);
        v
    }

    /// Whether `v` holds the coefficients of a real function: `v_{-k} = conj(v_k)`.
    pub fn is_conjugate_symmetric(&self, v: &[Complex64], tol: f64) -> bool {
        (0..self.len()).all(|i| {
            let k = self.mode(i);
            let j = self.index([-k[0], -k[1]]).unwrap();
            (v[i] - v[j].conj()).norm() <= tol
        })
    }

    /// Evaluates the trigonometric sum at `x`.
    pub fn evaluate(&self, v: &[Complex64], x: [f64; 2]) -> Complex64 {
        v.iter()
            .enumerate()
            .map(|(i, c)| {
                let k = self.mode(i);
                c * Complex64::from_polar(1.0, k[0] as f64 * x[0] + k[1] as f64 * x[1])
            })
            .sum()
    }
}

/// Sparse Fourier coefficients of a real field on the torus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FourierField {
    pub terms: Vec<([i64; 2], Complex64)>,
}

impl FourierField {
    /// Samples `f` on a uniform grid and keeps the non-negligible coefficients.
    pub fn from_fn(f: impl Fn([f64; 2]) -> f64) -> Self {
        let g = FIELD_GRID;
        let kmax = (g / 2 - 1) as i64;
        let samples: Vec<f64> = (0..g * g)
            .map(|q| f([TWO_PI * (q / g) as f64 / g as f64, TWO_PI * (q % g) as f64 / g as f64]))
            .collect();
        let twiddle: Vec<Complex64> =
            (0..g).map(|a| Complex64::from_polar(1.0, -TWO_PI * a as f64 / g as f64)).collect();
        let mut raw = Vec::new();
        for m1 in -kmax..=kmax {
            for m2 in -kmax..=kmax {
                let mut acc = Complex64::new(0.0, 0.0);
                for (q, &s) in samples.iter().enumerate() {
                    let (a, b) = ((q / g) as i64, (q % g) as i64);
                    let phase = (m1 * a + m2 * b).rem_euclid(g as i64) as usize;
                    acc += twiddle[phase] * s;
                }
                raw.push(([m1, m2], acc / (g * g) as f64));
            }
        }
        let scale = raw.iter().map(|(_, c)| c.norm()).fold(1.0, f64::max);
        let terms = raw
            .into_iter()
            .filter(|(_, c)| c.norm() > 1e-14 * scale)
            .map(|(m, c)| {
                // snap rounding noise in each component
                let clean = |x: f64| if x.abs() <= 1e-15 * scale { 0.0 } else { x };
                (m, Complex64::new(clean(c.re), clean(c.im)))
            })
            .collect();
        FourierField { terms }
    }

    pub fn coefficient(&self, m: [i64; 2]) -> Complex64 {
        self.terms.iter().find(|(k, _)| *k == m).map(|(_, c)| *c).unwrap_or_default()
    }
}

/// Complex sparse matrix acting on coefficient vectors of a [`ModeBasis`],
/// stored row-compressed.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralOperator {
    basis: ModeBasis,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Complex64>,
}

impl SpectralOperator {
    /// Builds the matrix from per-row `(column, value)` lists; duplicate
    /// columns are summed and exact zeros dropped.
    pub fn from_rows(basis: ModeBasis, rows: Vec<Vec<(usize, Complex64)>>) -> Self {
        assert_eq!(rows.len(), basis.len());
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, Complex64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                if v != Complex64::new(0.0, 0.0) {
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SpectralOperator { basis, row_ptr, cols, vals }
    }

    pub fn diagonal_matrix(basis: ModeBasis, diag: impl Fn([i64; 2]) -> Complex64) -> Self {
        let rows = (0..basis.len()).map(|i| vec![(i, diag(basis.mode(i)))]).collect();
        Self::from_rows(basis, rows)
    }

    /// Galerkin matrix of `D Δ + β·∇ + v·∇`.
    pub fn transport(basis: ModeBasis, diffusion: f64, drift: [f64; 2], velocity: &[FourierField; 2]) -> Self {
        let i_unit = Complex64::new(0.0, 1.0);
        let rows = (0..basis.len())
            .map(|r| {
                let n = basis.mode(r);
                let k2 = (n[0] * n[0] + n[1] * n[1]) as f64;
                let mut row = vec![(r, Complex64::new(-diffusion * k2, n[0] as f64 * drift[0] + n[1] as f64 * drift[1]))];
                for (j, comp) in velocity.iter().enumerate() {
                    for &(m, c) in &comp.terms {
                        let k = [n[0] - m[0], n[1] - m[1]];
                        if let Some(col) = basis.index(k) {
                            row.push((col, c * i_unit * k[j] as f64));
                        }
                    }
                }
                row
            })
            .collect();
        Self::from_rows(basis, rows)
    }

    /// Galerkin matrix of multiplication by a field.
    pub fn multiplication(basis: ModeBasis, field: &FourierField) -> Self {
        let rows = (0..basis.len())
            .map(|r| {
                let n = basis.mode(r);
                field
                    .terms
                    .iter()
                    .filter_map(|&(m, c)| basis.index([n[0] - m[0], n[1] - m[1]]).map(|col| (col, c)))
                    .collect()
            })
            .collect();
        Self::from_rows(basis, rows)
    }

    pub fn basis(&self) -> ModeBasis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        let (a, b) = (self.row_ptr[row], self.row_ptr[row + 1]);
        self.cols[a..b]
            .iter()
            .position(|&c| c as usize == col)
            .map(|p| self.vals[a + p])
            .unwrap_or_default()
    }

    /// `y = A x`
    #[inline]
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[p] * x[self.cols[p] as usize];
            }
            *out = acc;
        }
    }

    /// `A + B` on the same basis.
    pub fn sum(&self, other: &SpectralOperator) -> Result<SpectralOperator> {
        if self.basis != other.basis {
            return Err(Error::Dimension { expected: self.dim(), got: other.dim() });
        }
        let rows = (0..self.dim())
            .map(|r| {
                let own = (self.row_ptr[r]..self.row_ptr[r + 1]).map(|p| (self.cols[p] as usize, self.vals[p]));
                let theirs =
                    (other.row_ptr[r]..other.row_ptr[r + 1]).map(|p| (other.cols[p] as usize, other.vals[p]));
                own.chain(theirs).collect()
            })
            .collect();
        Ok(Self::from_rows(self.basis, rows))
    }

    /// Smallest and largest real part on the diagonal.
    pub fn diagonal_real_range(&self) -> (f64, f64) {
        (0..self.dim())
            .map(|r| self.entry(r, r).re)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Induced 1-norm of `A - shift·I`.
    pub fn shifted_one_norm(&self, shift: f64) -> f64 {
        let mut col_sums = vec![0.0; self.dim()];
        for r in 0..self.dim() {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[p] as usize;
                let v = if c == r { self.vals[p] - shift } else { self.vals[p] };
                col_sums[c] += v.norm();
            }
        }
        // rows without a stored diagonal still carry the shift
        for (r, s) in col_sums.iter_mut().enumerate() {
            if self.entry(r, r) == Complex64::new(0.0, 0.0) {
                *s += shift.abs();
            }
        }
        col_sums.into_iter().fold(0.0, f64::max)
    }

    /// Dense copy, row-major indices `(row, col)`.
    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let n = self.dim();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for r in 0..n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[p] as usize)] = self.vals[p];
            }
        }
        m
    }
}

fn check_planar(problem: &KppProblem) -> Result<()> {
    if problem.dim() != 2 {
        return Err(Error::Dimension { expected: 2, got: problem.dim() });
    }
    Ok(())
}

/// Transport part `D Δ + (β + v(t))·∇` of the tilted operator, where `D` is
/// the diffusion and `β` the constant drift of the problem.
pub fn assemble_l(problem: &KppProblem, t: f64, h: usize) -> Result<SpectralOperator> {
    check_planar(problem)?;
    let basis = ModeBasis::new(h)?;
    let frozen = problem.flow.frozen(t);
    let component = |j: usize| {
        FourierField::from_fn(|x| {
            let mut v = [0.0; 2];
            frozen.eval(&x, &mut v);
            v[j]
        })
    };
    let shift = problem.drift_shift();
    Ok(SpectralOperator::transport(basis, problem.diffusion(), [shift[0], shift[1]], &[component(0), component(1)]))
}

/// Multiplication by the potential `c(t, ·)`.
pub fn assemble_c(problem: &KppProblem, t: f64, h: usize) -> Result<SpectralOperator> {
    check_planar(problem)?;
    let basis = ModeBasis::new(h)?;
    let field = FourierField::from_fn(|x| problem.potential(t, &x));
    Ok(SpectralOperator::multiplication(basis, &field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{Flow, FlowKind};

    const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn problem(a: f64, lambda: f64) -> KppProblem {
        KppProblem::new(Flow::simple(FlowKind::Cellular2D, a).unwrap(), vec![1.0, 0.0], lambda).unwrap()
    }

    #[test]
    fn basis_indexing_round_trips() {
        let b = ModeBasis::new(3).unwrap();
        assert_eq!(b.len(), 49);
        for i in 0..b.len() {
            assert_eq!(b.index(b.mode(i)), Some(i));
        }
        assert_eq!(b.index([4, 0]), None);
        assert!(ModeBasis::new(0).is_err());
    }

    #[test]
    fn sine_coefficients() {
        let f = FourierField::from_fn(|x| x[0].sin());
        assert_eq!(f.terms.len(), 2);
        assert!((f.coefficient([1, 0]) - c(0.0, -0.5)).norm() < 1e-15);
        assert!((f.coefficient([-1, 0]) - c(0.0, 0.5)).norm() < 1e-15);
        let g = FourierField::from_fn(|x| -x[0].sin() * x[1].cos());
        assert_eq!(g.terms.len(), 4);
        assert!((g.coefficient([1, 1]) - c(0.0, 0.25)).norm() < 1e-15);
    }

    #[test]
    fn still_flow_is_diagonal() {
        let l = assemble_l(&problem(0.0, 0.0), 0.0, 4).unwrap();
        assert_eq!(l.nnz(), l.dim() - 1); // the k = 0 entry is zero
        let b = l.basis();
        for i in 0..l.dim() {
            let k = b.mode(i);
            assert_eq!(l.entry(i, i), c(-((k[0] * k[0] + k[1] * k[1]) as f64), 0.0));
        }
        let l = assemble_l(&problem(0.0, 1.0), 0.0, 4).unwrap();
        for i in 0..l.dim() {
            let k = b.mode(i);
            assert_eq!(l.entry(i, i), c(-((k[0] * k[0] + k[1] * k[1]) as f64), 2.0 * k[0] as f64));
        }
    }

    #[test]
    fn cellular_advection_matches_pointwise_product() {
        // apply to e^{i x1} and compare with v·∇ evaluated on a grid
        let l = assemble_l(&problem(1.0, 0.0), 0.0, 4).unwrap();
        let b = l.basis();
        let mut u = vec![c(0.0, 0.0); b.len()];
        u[b.index([1, 0]).unwrap()] = c(1.0, 0.0);
        let mut w = vec![c(0.0, 0.0); b.len()];
        l.apply(&u, &mut w);
        for &x in &[[0.3, 1.1], [2.0, 5.0], [4.4, 0.7]] {
            let x: [f64; 2] = x;
            let e = Complex64::from_polar(1.0, x[0]);
            let expected = -e + (-x[0].sin() * x[1].cos()) * I * e;
            assert!((b.evaluate(&w, x) - expected).norm() < 1e-13);
        }
        // couplings only along k ± (1, ±1)
        let row = b.index([0, 0]).unwrap();
        for col in 0..b.len() {
            let k = b.mode(col);
            let v = l.entry(row, col);
            if v != c(0.0, 0.0) {
                assert!(k[0].abs() == 1 && k[1].abs() == 1 || k == [0, 0], "{k:?}");
            }
        }
    }

    #[test]
    fn potential_matrix_checks() {
        let p = problem(0.0, 1.0);
        let m = assemble_c(&p, 0.0, 3).unwrap();
        assert_eq!(m.to_dense(), nalgebra::DMatrix::identity(49, 49) * c(2.0, 0.0));

        let p = problem(1.0, 0.35);
        let m = assemble_c(&p, 0.0, 5).unwrap();
        let b = m.basis();
        let mut out = vec![c(0.0, 0.0); b.len()];
        m.apply(&b.constant(), &mut out);
        for &x in &[[0.1, 0.2], [3.0, 1.0], [5.5, 4.0]] {
            assert!((b.evaluate(&out, x) - c(p.potential(0.0, &x), 0.0)).norm() < 1e-13);
        }
        assert!((m.entry(0, 0) - c(1.1225, 0.0)).norm() < 1e-15);

        let sine = SpectralOperator::multiplication(b, &FourierField::from_fn(|x| x[0].sin()));
        let r = b.index([0, 0]).unwrap();
        assert!((sine.entry(r, b.index([-1, 0]).unwrap()) - c(0.0, -0.5)).norm() < 1e-15);
        assert!((sine.entry(r, b.index([1, 0]).unwrap()) - c(0.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn three_dimensional_problems_are_rejected() {
        let p = KppProblem::new(Flow::simple(FlowKind::ABC3D, 1.0).unwrap(), vec![1.0, 0.0, 0.0], 0.5).unwrap();
        assert!(matches!(assemble_l(&p, 0.0, 4), Err(Error::Dimension { .. })));
        assert!(assemble_c(&p, 0.0, 4).is_err());
    }

    #[test]
    fn real_fields_stay_real() {
        let p = problem(1.0, 0.6);
        let l = assemble_l(&p, 0.0, 6).unwrap();
        let m = assemble_c(&p, 0.0, 6).unwrap();
        let b = l.basis();
        let u = FourierField::from_fn(|x| (x[0] + 2.0 * x[1]).cos() + 0.3 * (x[1] - x[0]).sin() + 0.7);
        let mut v = vec![c(0.0, 0.0); b.len()];
        for &(k, z) in &u.terms {
            v[b.index(k).unwrap()] = z;
        }
        assert!(b.is_conjugate_symmetric(&v, 1e-15));
        let mut w = vec![c(0.0, 0.0); b.len()];
        l.apply(&v, &mut w);
        assert!(b.is_conjugate_symmetric(&w, 1e-12));
        m.apply(&v, &mut w);
        assert!(b.is_conjugate_symmetric(&w, 1e-12));
    }
}
