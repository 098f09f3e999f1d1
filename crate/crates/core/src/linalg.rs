//! Dense row-major matrices and the small amount of linear algebra the lab
//! needs: LU factorization (determinants, solves), cyclic Jacobi symmetric
//! eigendecomposition, and spectral norms by power iteration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compensated::dot_compensated;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("matrix is singular (pivot {pivot:e} at step {step})")]
    Singular { pivot: f64, step: usize },
    #[error("matrix is not symmetric positive-definite")]
    NotPositiveDefinite,
}

/// Dense matrix with row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            if row.len() != c {
                return Err(LinalgError::ShapeMismatch {
                    expected: format!("{r}x{c}"),
                    got: format!("ragged row of length {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        let m = Self { rows: r, cols: c, data };
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn check_finite(&self) -> Result<(), LinalgError> {
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.get(r, c).is_finite() {
                    return Err(LinalgError::NonFiniteEntry { row: r, col: c });
                }
            }
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn negated(&self) -> Self {
        let mut m = self.clone();
        for v in &mut m.data {
            *v = -*v;
        }
        m
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        for v in &mut m.data {
            *v *= s;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `y = A x` with plain accumulation in column order.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut s = 0.0;
            for (a, b) in row.iter().zip(x) {
                s += a * b;
            }
            y[r] = s;
        }
        y
    }

    /// Accumulates `A x` into `acc` term by term, so that accumulating the
    /// blocks of a partitioned matrix in column order reproduces the exact
    /// floating-point sum of one whole-matrix [`Self::matvec`].
    pub fn matvec_into(&self, x: &[f64], acc: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(acc.len(), self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            let mut s = acc[r];
            for (a, b) in row.iter().zip(x) {
                s += a * b;
            }
            acc[r] = s;
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * out.cols + c] += a * other.get(k, c);
                }
            }
        }
        out
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn symmetry_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                d = d.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        d
    }
}

impl TryFrom<Vec<Vec<f64>>> for DenseMatrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        DenseMatrix::from_rows(rows).map_err(|e| e.to_string())
    }
}

impl From<DenseMatrix> for Vec<Vec<f64>> {
    fn from(m: DenseMatrix) -> Self {
        m.to_nested()
    }
}

/// LU factorization with partial pivoting.
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(m: &DenseMatrix) -> Result<Self, LinalgError> {
        assert!(m.is_square(), "LU requires a square matrix");
        let n = m.rows;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for r in (k + 1)..n {
                let v = lu.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(LinalgError::Singular { pivot: 0.0, step: k });
            }
            if p != k {
                for c in 0..n {
                    let (a, b) = (lu.get(k, c), lu.get(p, c));
                    lu.set(k, c, b);
                    lu.set(p, c, a);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let piv = lu.get(k, k);
            for r in (k + 1)..n {
                let f = lu.get(r, k) / piv;
                lu.set(r, k, f);
                for c in (k + 1)..n {
                    let v = lu.get(r, c) - f * lu.get(k, c);
                    lu.set(r, c, v);
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn det(&self) -> f64 {
        let n = self.lu.rows;
        let mut d = self.sign;
        for i in 0..n {
            d *= self.lu.get(i, i);
        }
        d
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        debug_assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 1..n {
            let mut s = x[r];
            for c in 0..r {
                s -= self.lu.get(r, c) * x[c];
            }
            x[r] = s;
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in (r + 1)..n {
                s -= self.lu.get(r, c) * x[c];
            }
            x[r] = s / self.lu.get(r, r);
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        let n = self.lu.rows;
        debug_assert_eq!(b.rows, n);
        let mut out = DenseMatrix::zeros(n, b.cols);
        let mut col = vec![0.0; n];
        for c in 0..b.cols {
            for r in 0..n {
                col[r] = b.get(r, c);
            }
            let x = self.solve(&col);
            for r in 0..n {
                out.set(r, c, x[r]);
            }
        }
        out
    }
}

/// Determinant via LU with partial pivoting; zero for exactly singular input.
pub fn determinant(m: &DenseMatrix) -> f64 {
    match Lu::factor(m) {
        Ok(lu) => lu.det(),
        Err(_) => 0.0,
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order with matching eigenvector columns.
pub fn sym_eigen(m: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    assert!(m.is_square(), "sym_eigen requires a square matrix");
    let n = m.rows;
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for r in 0..n {
            for c in (r + 1)..n {
                off = off.max(a.get(r, c).abs());
            }
        }
        if off <= 1e-14 * a.max_abs().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a.get(i, i), i)).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new_col, (_, old_col)) in pairs.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new_col, v.get(r, *old_col));
        }
    }
    (values, vectors)
}

/// Symmetry plus positive-definiteness check.
///
/// Symmetry defect must not exceed `1e-12 * max(1, max|entry|)`; the smallest
/// eigenvalue must exceed `1e-10` times the largest eigenvalue magnitude.
pub fn check_positive_definite(m: &DenseMatrix) -> Result<(), LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotPositiveDefinite);
    }
    if m.symmetry_defect() > 1e-12 * m.max_abs().max(1.0) {
        return Err(LinalgError::NotPositiveDefinite);
    }
    let (values, _) = sym_eigen(m);
    let max_mag = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max_mag == 0.0 || values[0] <= 1e-10 * max_mag {
        return Err(LinalgError::NotPositiveDefinite);
    }
    Ok(())
}

/// Symmetric square root `W^{1/2}` via eigendecomposition.
pub fn sym_sqrt(m: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    check_positive_definite(m)?;
    let n = m.rows;
    let (values, vectors) = sym_eigen(m);
    let mut out = DenseMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += vectors.get(r, k) * values[k].sqrt() * vectors.get(c, k);
            }
            out.set(r, c, s);
        }
    }
    Ok(out)
}

/// Result of a spectral-norm power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralEstimate {
    /// Best estimate of the largest singular value.
    pub value: f64,
    /// False when the iteration cap was reached before the tolerance.
    pub converged: bool,
    pub iterations: usize,
}

pub const SPECTRAL_TOL: f64 = 1e-10;
pub const SPECTRAL_MAX_ITER: usize = 10_000;

/// Largest singular value via power iteration on `MᵀM`.
///
/// The start vector is the normalized all-ones vector; if an iterate
/// degenerates to zero the iteration restarts from successive basis vectors,
/// and a matrix that annihilates every probe is reported as norm zero.
pub fn spectral_norm(m: &DenseMatrix, tol: f64) -> SpectralEstimate {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = m.cols;
    if n == 0 || m.rows == 0 || m.max_abs() == 0.0 {
        return SpectralEstimate { value: 0.0, converged: true, iterations: 0 };
    }
    let mt = m.transpose();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut probe = 0usize;
    let mut sigma_prev = f64::NAN;
    for it in 1..=SPECTRAL_MAX_ITER {
        let mv = m.matvec(&v);
        let w = mt.matvec(&mv);
        let norm_w = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm_w == 0.0 {
            // v lies in the kernel of MᵀM; fall back to the next basis vector.
            if probe < n {
                v = vec![0.0; n];
                v[probe] = 1.0;
                probe += 1;
                sigma_prev = f64::NAN;
                continue;
            }
            return SpectralEstimate { value: 0.0, converged: true, iterations: it };
        }
        // Rayleigh quotient of MᵀM at the unit vector v.
        let lambda = dot_compensated(&v, &w);
        let sigma = lambda.max(0.0).sqrt();
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm_w;
        }
        if sigma_prev.is_finite() && (sigma - sigma_prev).abs() <= tol * sigma.max(1e-300) {
            return SpectralEstimate { value: sigma, converged: true, iterations: it };
        }
        sigma_prev = sigma;
    }
    SpectralEstimate { value: sigma_prev, converged: false, iterations: SPECTRAL_MAX_ITER }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinant_of_triangular_blocks_is_one() {
        // [[I, X], [0, I]] must have unit determinant regardless of X.
        let mut m = DenseMatrix::identity(4);
        m.set(0, 2, 3.5);
        m.set(0, 3, -1.25);
        m.set(1, 2, 100.0);
        assert!((determinant(&m) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lu_solve_round_trips() {
        let a = DenseMatrix::from_rows(vec![vec![4.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let lu = Lu::factor(&a).unwrap();
        let x = lu.solve(&[1.0, 2.0]);
        let b = a.matvec(&x);
        assert!((b[0] - 1.0).abs() < 1e-14 && (b[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_eigen_on_known_matrix() {
        // [[1,2],[2,1]] has eigenvalues -1 and 3.
        let m = DenseMatrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let (vals, _) = sym_eigen(&m);
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn positive_definite_check_rejects_indefinite() {
        let m = DenseMatrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(check_positive_definite(&m), Err(LinalgError::NotPositiveDefinite));
        let ok = DenseMatrix::from_rows(vec![vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert!(check_positive_definite(&ok).is_ok());
    }

    #[test]
    fn spectral_norm_identity_and_diag() {
        let est = spectral_norm(&DenseMatrix::identity(3), SPECTRAL_TOL);
        assert!((est.value - 1.0).abs() < 1e-9 && est.converged);
        let d = DenseMatrix::from_diag(&[3.0, 4.0]);
        let est = spectral_norm(&d, SPECTRAL_TOL);
        assert!((est.value - 4.0).abs() < 1e-8, "got {}", est.value);
    }

    #[test]
    fn spectral_norm_zero_matrix() {
        let est = spectral_norm(&DenseMatrix::zeros(3, 3), SPECTRAL_TOL);
        assert_eq!(est.value, 0.0);
        assert!(est.converged);
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let w = DenseMatrix::from_rows(vec![vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let s = sym_sqrt(&w).unwrap();
        let back = s.matmul(&s);
        assert!(back.max_abs_diff(&w) < 1e-12);
    }
}
