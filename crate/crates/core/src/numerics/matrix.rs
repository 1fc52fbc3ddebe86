//! Dense complex vectors and matrices sized for receiver arrays (M ≤ 64).
//!
//! Storage is row-major. Determinants and inverses go through partially
//! pivoted LU; Hermitian positive-definite inputs (covariances) can use the
//! Cholesky path, which also gives a log-determinant that does not underflow.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Cplx = Complex64;

/// Condition-number ceiling applied by [`CMatrix::inverse`].
pub const DEFAULT_MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct CVector(Vec<Cplx>);

impl CVector {
    pub fn new(elems: Vec<Cplx>) -> Result<Self> {
        if elems.is_empty() {
            return Err(Error::invalid("vector length must be positive"));
        }
        Ok(Self(elems))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector length must be positive");
        Self(vec![Cplx::new(0.0, 0.0); len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> Cplx) -> Self {
        assert!(len > 0, "vector length must be positive");
        Self((0..len).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[Cplx] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [Cplx] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Cplx> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<Cplx> {
        self.0
    }

    /// ‖v‖².
    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, c: Cplx) -> CVector {
        CVector(self.0.iter().map(|z| z * c).collect())
    }

    /// `self^H · other`.
    pub fn dot_conj(&self, other: &CVector) -> Cplx {
        assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }
}

impl Index<usize> for CVector {
    type Output = Cplx;
    fn index(&self, i: usize) -> &Cplx {
        &self.0[i]
    }
}

impl IndexMut<usize> for CVector {
    fn index_mut(&mut self, i: usize) -> &mut Cplx {
        &mut self.0[i]
    }
}

impl Add for &CVector {
    type Output = CVector;
    fn add(self, rhs: &CVector) -> CVector {
        assert_eq!(self.len(), rhs.len());
        CVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Cplx>,
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Cplx>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if rows * cols != data.len() {
            return Err(Error::invalid(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![Cplx::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Cplx::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Cplx) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[Cplx]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// `u · v^H`.
    pub fn outer(u: &[Cplx], v: &[Cplx]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Cplx] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Cplx] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[Cplx] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> CVector {
        CVector::from_fn(self.rows, |i| self[(i, j)])
    }

    pub fn hermitian_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scaled(&self, c: Cplx) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == Cplx::new(0.0, 0.0) {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[Cplx]) -> Vec<Cplx> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `x^H · A · x`.
    pub fn quad_form(&self, x: &[Cplx]) -> Cplx {
        assert!(self.is_square() && self.cols == x.len());
        let mut acc = Cplx::new(0.0, 0.0);
        for (i, xi) in x.iter().enumerate() {
            let ax: Cplx = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
            acc += xi.conj() * ax;
        }
        acc
    }

    pub fn trace(&self) -> Cplx {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Max absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in i..self.cols {
                if (self[(i, j)] - self[(j, i)].conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn require_square(&self, what: &str) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what} needs a square matrix, got {}x{}",
                self.rows, self.cols
            )))
        }
    }

    pub fn lu(&self) -> Result<Lu> {
        self.require_square("LU factorization")?;
        Ok(Lu::factor(self))
    }

    pub fn determinant(&self) -> Result<Cplx> {
        Ok(self.lu()?.determinant())
    }

    /// `ln |det A|`; `-inf` for an exactly singular matrix.
    pub fn log_abs_determinant(&self) -> Result<f64> {
        Ok(self.lu()?.log_abs_determinant())
    }

    pub fn inverse(&self) -> Result<CMatrix> {
        self.inverse_with_max_condition(DEFAULT_MAX_CONDITION)
    }

    /// Inverse via LU, rejecting matrices whose 1-norm condition number
    /// exceeds `max_condition`.
    pub fn inverse_with_max_condition(&self, max_condition: f64) -> Result<CMatrix> {
        let lu = self.lu()?;
        let inv = lu.inverse()?;
        let cond = self.norm_one() * inv.norm_one();
        if !cond.is_finite() || cond > max_condition {
            return Err(Error::SingularMatrix {
                pivot: lu.min_pivot(),
            });
        }
        Ok(inv)
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        self.require_square("Cholesky factorization")?;
        Cholesky::factor(self)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Cplx;
    fn index(&self, (i, j): (usize, usize)) -> &Cplx {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Cplx {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

/// `P·A = L·U` with unit-diagonal `L` packed below `U`.
#[derive(Clone, Debug)]
pub struct Lu {
    packed: CMatrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    fn factor(a: &CMatrix) -> Self {
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (p, _) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            if pivot.norm() == 0.0 {
                continue;
            }
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                for j in (k + 1)..n {
                    let ukj = lu[(k, j)];
                    lu[(i, j)] -= factor * ukj;
                }
            }
        }
        Self {
            packed: lu,
            perm,
            sign,
        }
    }

    pub fn dim(&self) -> usize {
        self.packed.rows
    }

    pub fn min_pivot(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.packed[(i, i)].norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn determinant(&self) -> Cplx {
        let prod: Cplx = (0..self.dim()).map(|i| self.packed[(i, i)]).product();
        prod * self.sign
    }

    pub fn log_abs_determinant(&self) -> f64 {
        (0..self.dim()).map(|i| self.packed[(i, i)].norm().ln()).sum()
    }

    pub fn solve(&self, b: &[Cplx]) -> Result<Vec<Cplx>> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let min_pivot = self.min_pivot();
        if !(min_pivot > 0.0) {
            return Err(Error::SingularMatrix { pivot: min_pivot });
        }
        let mut x: Vec<Cplx> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let l = self.packed[(i, k)];
                let xk = x[k];
                x[i] -= l * xk;
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let u = self.packed[(i, k)];
                let xk = x[k];
                x[i] -= u * xk;
            }
            x[i] /= self.packed[(i, i)];
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<CMatrix> {
        let n = self.dim();
        let mut inv = CMatrix::zeros(n, n);
        let mut e = vec![Cplx::new(0.0, 0.0); n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = Cplx::new(0.0, 0.0));
            e[j] = Cplx::new(1.0, 0.0);
            let col = self.solve(&e)?;
            for (i, v) in col.into_iter().enumerate() {
                inv[(i, j)] = v;
            }
        }
        Ok(inv)
    }
}

/// `A = L·L^H` for Hermitian positive-definite `A`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    lower: CMatrix,
}

impl Cholesky {
    fn factor(a: &CMatrix) -> Result<Self> {
        let n = a.rows;
        let mut l = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SingularMatrix {
                    pivot: d.max(0.0).sqrt(),
                });
            }
            let ljj = d.sqrt();
            l[(j, j)] = Cplx::new(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &CMatrix {
        &self.lower
    }

    /// `ln det A = 2 Σ ln L_ii`.
    pub fn log_determinant(&self) -> f64 {
        2.0 * (0..self.lower.rows)
            .map(|i| self.lower[(i, i)].re.ln())
            .sum::<f64>()
    }

    pub fn solve(&self, b: &[Cplx]) -> Vec<Cplx> {
        let n = self.lower.rows;
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lik = l[(i, k)];
                let yk = y[k];
                y[i] -= lik * yk;
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = l[(k, i)].conj();
                let yk = y[k];
                y[i] -= lki * yk;
            }
            y[i] /= l[(i, i)];
        }
        y
    }

    /// Inverse, re-symmetrized so the result is exactly Hermitian.
    pub fn inverse(&self) -> CMatrix {
        let n = self.lower.rows;
        let mut inv = CMatrix::zeros(n, n);
        let mut e = vec![Cplx::new(0.0, 0.0); n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = Cplx::new(0.0, 0.0));
            e[j] = Cplx::new(1.0, 0.0);
            for (i, v) in self.solve(&e).into_iter().enumerate() {
                inv[(i, j)] = v;
            }
        }
        for i in 0..n {
            inv[(i, i)] = Cplx::new(inv[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let avg = (inv[(i, j)] + inv[(j, i)].conj()) * 0.5;
                inv[(i, j)] = avg;
                inv[(j, i)] = avg.conj();
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Prng;

    fn c(re: f64, im: f64) -> Cplx {
        Cplx::new(re, im)
    }

    fn random_matrix(rng: &mut Prng, n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| rng.cscg())
    }

    fn random_vector(rng: &mut Prng, n: usize) -> CVector {
        CVector::from_fn(n, |_| rng.cscg())
    }

    #[test]
    fn hermitian_transpose_basics() {
        let id = CMatrix::identity(4);
        assert_eq!(id.hermitian_transpose(), id);

        let m = CMatrix::new(1, 1, vec![c(0.0, 1.0)]).unwrap();
        assert_eq!(m.hermitian_transpose()[(0, 0)], c(0.0, -1.0));

        let mut rng = Prng::new(3, 0);
        let a = CMatrix::from_fn(3, 5, |_, _| rng.cscg());
        let ah = a.hermitian_transpose();
        assert_eq!((ah.rows(), ah.cols()), (5, 3));
        assert_eq!(ah.hermitian_transpose(), a);
    }

    #[test]
    fn inverse_of_identity_and_diagonal() {
        assert_eq!(CMatrix::identity(5).inverse().unwrap(), CMatrix::identity(5));
        let d = CMatrix::diag(&[c(2.0, 0.0), c(4.0, 0.0)]);
        let inv = d.inverse().unwrap();
        assert!((inv[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((inv[(1, 1)] - c(0.25, 0.0)).norm() < 1e-15);
        assert_eq!(inv[(0, 1)], c(0.0, 0.0));
    }

    #[test]
    fn inverse_matches_sherman_morrison() {
        let mut rng = Prng::new(11, 1);
        for m in 1..=16 {
            let k = random_vector(&mut rng, m);
            let r = &CMatrix::identity(m) + &CMatrix::outer(k.as_slice(), k.as_slice());
            // (I + k k^H)^-1 = I - k k^H / (1 + |k|^2)
            let oracle = &CMatrix::identity(m)
                - &CMatrix::outer(k.as_slice(), k.as_slice())
                    .scaled(c(1.0 / (1.0 + k.norm_sqr()), 0.0));
            let lu_inv = r.inverse().unwrap();
            assert!((&lu_inv - &oracle).frobenius_norm() < 1e-9, "M={m}");
            let chol_inv = r.cholesky().unwrap().inverse();
            assert!((&chol_inv - &oracle).frobenius_norm() < 1e-9, "M={m}");
            let resid = &(&r * &lu_inv) - &CMatrix::identity(m);
            assert!(resid.frobenius_norm() < 1e-9);
        }
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let a = CMatrix::new(2, 2, vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]).unwrap();
        match a.inverse() {
            Err(Error::SingularMatrix { pivot }) => assert!(pivot < 1e-12),
            other => panic!("expected singular error, got {other:?}"),
        }
        let near = CMatrix::diag(&[c(1.0, 0.0), c(1e-14, 0.0)]);
        assert!(matches!(near.inverse(), Err(Error::SingularMatrix { .. })));
        assert!(near.inverse_with_max_condition(1e15).is_ok());
    }

    #[test]
    fn determinant_cases() {
        let d = CMatrix::diag(&[c(2.0, 0.0), c(3.0, 0.0)]);
        assert!((d.determinant().unwrap() - c(6.0, 0.0)).norm() < 1e-14);

        let mut rng = Prng::new(5, 2);
        for m in 1..=12 {
            let k = random_vector(&mut rng, m);
            let r = &CMatrix::identity(m) + &CMatrix::outer(k.as_slice(), k.as_slice());
            let det = r.determinant().unwrap();
            let lemma = 1.0 + k.norm_sqr();
            assert!((det.re - lemma).abs() < 1e-9 * lemma);
            assert!(det.im.abs() < 1e-10);
            let chol_ld = r.cholesky().unwrap().log_determinant();
            assert!((chol_ld - lemma.ln()).abs() < 1e-12);
        }

        for n in 1..=8 {
            let a = &random_matrix(&mut rng, n) + &CMatrix::identity(n).scaled(c(3.0, 0.0));
            let prod = a.determinant().unwrap() * a.inverse().unwrap().determinant().unwrap();
            assert!((prod - c(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn log_det_agrees_with_direct_on_hpd() {
        let mut rng = Prng::new(17, 0);
        for n in 1..=10 {
            let b = random_matrix(&mut rng, n);
            let a = &(&b * &b.hermitian_transpose()) + &CMatrix::identity(n);
            let direct = a.determinant().unwrap().re;
            assert!(direct < 1e12);
            let via_chol = a.cholesky().unwrap().log_determinant().exp();
            let via_lu = a.log_abs_determinant().unwrap().exp();
            assert!((via_chol - direct).abs() <= 1e-9 * direct);
            assert!((via_lu - direct).abs() <= 1e-9 * direct);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = CMatrix::diag(&[c(1.0, 0.0), c(-1.0, 0.0)]);
        assert!(matches!(a.cholesky(), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn non_square_rejected() {
        let a = CMatrix::zeros(2, 3);
        assert!(matches!(a.determinant(), Err(Error::InvalidArgument(_))));
        assert!(matches!(a.inverse(), Err(Error::InvalidArgument(_))));
        assert!(CMatrix::new(2, 2, vec![c(0.0, 0.0); 3]).is_err());
    }

    #[test]
    fn quad_form_matches_explicit_product() {
        let mut rng = Prng::new(9, 9);
        let a = random_matrix(&mut rng, 4);
        let x = random_vector(&mut rng, 4);
        let ax = a.mul_vec(x.as_slice());
        let explicit: Cplx = x.iter().zip(&ax).map(|(xi, yi)| xi.conj() * yi).sum();
        assert!((a.quad_form(x.as_slice()) - explicit).norm() < 1e-12);
    }
}
