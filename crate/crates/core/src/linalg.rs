//! Dense small-matrix kernel.
//!
//! Everything the bound estimation, LMI assembly and the barrier solver need:
//! a row-major [`DenseMatrix`], a packed [`SymmetricMatrix`], cyclic Jacobi
//! eigen-decomposition, Cholesky-based definiteness tests, Kronecker products
//! and the spectral (Euclidean-induced) operator norm.
//!
//! Dimensions handled here are small (at most a few hundred), so all routines
//! are straightforward O(n³) dense kernels.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default absolute tolerance used by definiteness tests.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Sweep cap for the cyclic Jacobi eigen-solver.
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("Jacobi eigen-solver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },
    #[error("matrix is singular to working precision")]
    Singular,
}

/// Row-major dense real matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Self::from_row_major(r, c, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        self.data
            .chunks(self.cols.max(1))
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Symmetric part `(A + Aᵀ)/2`; panics on non-square input.
    pub fn sym_part(&self) -> SymmetricMatrix {
        assert!(self.is_square(), "sym_part of a non-square matrix");
        let n = self.rows;
        let mut s = SymmetricMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                s.set(i, j, 0.5 * (self[(i, j)] + self[(j, i)]));
            }
        }
        s
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &DenseMatrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> DenseMatrix {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    ///
    /// Fails with [`LinalgError::Singular`] when a pivot falls below
    /// `rel_tol · max|A|`.
    pub fn inverse(&self, rel_tol: f64) -> Result<DenseMatrix, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::Dimension(
                "inverse of a non-square matrix".into(),
            ));
        }
        let n = self.rows;
        let scale = self.max_abs();
        if scale == 0.0 {
            return Err(LinalgError::Singular);
        }
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let (piv, pval) =
                (col..n)
                    .map(|r| (r, a[(r, col)].abs()))
                    .fold(
                        (col, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pval <= rel_tol * scale {
                return Err(LinalgError::Singular);
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(piv * n + j, col * n + j);
                    inv.data.swap(piv * n + j, col * n + j);
                }
            }
            let d = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= d;
                inv[(col, j)] /= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(r, j)] -= f * a[(col, j)];
                    inv[(r, j)] -= f * inv[(col, j)];
                }
            }
        }
        Ok(inv)
    }

    /// Spectral condition number `σ_max / σ_min` (infinite when singular).
    pub fn condition_number(&self) -> f64 {
        let gram = self
            .transpose()
            .matmul(self)
            .expect("square gram")
            .sym_part();
        match sym_eig(&gram) {
            Ok(e) => {
                let lo = e.values[0].max(0.0).sqrt();
                let hi = e.values[e.values.len() - 1].max(0.0).sqrt();
                if lo == 0.0 {
                    f64::INFINITY
                } else {
                    hi / lo
                }
            }
            Err(_) => f64::INFINITY,
        }
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix{:?}", self.to_rows())
    }
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;
    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "add dimension mismatch"
        );
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;
    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "sub dimension mismatch"
        );
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Neg for &DenseMatrix {
    type Output = DenseMatrix;
    fn neg(self) -> DenseMatrix {
        self.scale(-1.0)
    }
}

impl Mul for &DenseMatrix {
    type Output = DenseMatrix;
    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.matmul(rhs).expect("matmul dimension mismatch")
    }
}

/// Symmetric matrix stored as its packed upper triangle (row-major, `i ≤ j`).
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    dim: usize,
    packed: Vec<f64>,
}

#[inline]
fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // rows 0..i contribute dim, dim-1, ..., dim-i+1 entries
    i * dim - i * (i + 1) / 2 + j
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            packed: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut s = Self::zeros(dim);
        for i in 0..dim {
            s.set(i, i, 1.0);
        }
        s
    }

    pub fn from_diag(values: &[f64]) -> Self {
        let mut s = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            s.set(i, i, *v);
        }
        s
    }

    /// Builds from a dense matrix, requiring `|a_ij − a_ji| ≤ tol·max(1, max|a|)`.
    pub fn from_dense(a: &DenseMatrix, tol: f64) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::Dimension(
                "symmetric matrix must be square".into(),
            ));
        }
        let scale = a.max_abs().max(1.0);
        for i in 0..a.rows() {
            for j in (i + 1)..a.cols() {
                if (a[(i, j)] - a[(j, i)]).abs() > tol * scale {
                    return Err(LinalgError::Dimension(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(a.sym_part())
    }

    /// Packed upper triangle, row-major.
    pub fn from_packed(dim: usize, packed: Vec<f64>) -> Result<Self, LinalgError> {
        if packed.len() != dim * (dim + 1) / 2 {
            return Err(LinalgError::Dimension(
                "packed length does not match dim".into(),
            ));
        }
        Ok(Self { dim, packed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[packed_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = packed_index(self.dim, i, j);
        self.packed[k] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let k = packed_index(self.dim, i, j);
        self.packed[k] += v;
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.dim;
        let mut d = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.get(i, j);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        d
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &SymmetricMatrix) {
        assert_eq!(self.dim, other.dim, "axpy dimension mismatch");
        for (a, b) in self.packed.iter_mut().zip(&other.packed) {
            *a += s * b;
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            packed: self.packed.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.packed.iter().all(|v| *v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.packed.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = self.get(i, j);
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s.sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn min_eigenvalue(&self) -> Result<f64, LinalgError> {
        Ok(sym_eig(self)?.values[0])
    }

    pub fn max_eigenvalue(&self) -> Result<f64, LinalgError> {
        let e = sym_eig(self)?;
        Ok(e.values[e.values.len() - 1])
    }
}

impl fmt::Debug for SymmetricMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricMatrix{:?}", self.to_dense().to_rows())
    }
}

/// Standard Kronecker product.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (ar, ac, br, bc) = (a.rows(), a.cols(), b.rows(), b.cols());
    let mut out = DenseMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: DenseMatrix,
}

impl SymEig {
    /// `Q diag(λ) Qᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let q = &self.vectors;
        let n = self.values.len();
        let mut out = DenseMatrix::zeros(n, n);
        for (k, lam) in self.values.iter().enumerate() {
            for i in 0..n {
                let qi = q[(i, k)] * lam;
                for j in 0..n {
                    out[(i, j)] += qi * q[(j, k)];
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi eigen-solver.
pub fn sym_eig(s: &SymmetricMatrix) -> Result<SymEig, LinalgError> {
    let n = s.dim();
    if n == 0 {
        return Err(LinalgError::Dimension(
            "eigen-decomposition of an empty matrix".into(),
        ));
    }
    if !s.is_finite() {
        return Err(LinalgError::NonFinite { row: 0, col: 0 });
    }
    let mut a = s.to_dense();
    let mut v = DenseMatrix::identity(n);
    let total = a.frobenius_norm();
    let off_norm = |a: &DenseMatrix| {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        off.sqrt()
    };

    let mut converged = n == 1 || total == 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
        if off_norm(&a) <= f64::EPSILON * 1e-2 * total {
            converged = true;
        }
    }
    if !converged {
        let off = off_norm(&a);
        // rounding can stall the last sweep just above the threshold
        if off > 1e-12 * total {
            return Err(LinalgError::NoConvergence {
                sweeps,
                off_norm: off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, new)] = v[(r, old)];
        }
    }
    Ok(SymEig { values, vectors })
}

/// Lower-triangular Cholesky factor of a positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    // row-major lower triangle, full storage for simplicity
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `s − shift·I`; `None` when a pivot is not strictly positive.
    pub fn factor_shifted(s: &SymmetricMatrix, shift: f64) -> Option<Self> {
        let n = s.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = s.get(j, j) - shift;
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return None;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut v = s.get(i, j);
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / djj;
            }
        }
        Some(Self { dim: n, l })
    }

    pub fn factor(s: &SymmetricMatrix) -> Option<Self> {
        Self::factor_shifted(s, 0.0)
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| 2.0 * self.l[i * self.dim + i].ln())
            .sum()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }

    /// Dense inverse of the factored matrix.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.dim;
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // symmetrize rounding
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// `λ_min(s) > tol`, decided by attempting a Cholesky factorization of `s − tol·I`.
pub fn is_positive_definite(s: &SymmetricMatrix, tol: f64) -> bool {
    assert!(tol >= 0.0, "tolerance must be nonnegative");
    Cholesky::factor_shifted(s, tol).is_some()
}

/// Euclidean-induced norm `√λ_max(AᵀA)`.
pub fn operator_norm(a: &DenseMatrix) -> f64 {
    if a.rows() == 0 || a.cols() == 0 {
        return 0.0;
    }
    // 2x2 closed form: the hot path of ρ estimation
    if a.rows() == 2 && a.cols() == 2 {
        let (p, q, r, s) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
        let fro2 = p * p + q * q + r * r + s * s;
        let det = p * s - q * r;
        let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
        return (0.5 * (fro2 + disc)).sqrt();
    }
    let gram = if a.rows() < a.cols() {
        a.matmul(&a.transpose()).expect("gram")
    } else {
        a.transpose().matmul(a).expect("gram")
    };
    sym_eig(&gram.sym_part())
        .map(|e| e.values[e.values.len() - 1].max(0.0).sqrt())
        .unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_row_major(r, c, data).unwrap()
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymmetricMatrix {
        random_dense(rng, n, n).sym_part()
    }

    // determinant by elimination, independent of the eigen path
    fn det(a: &DenseMatrix) -> f64 {
        let n = a.rows();
        let mut m = a.clone();
        let mut d = 1.0;
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs()))
                .unwrap();
            if m[(p, c)] == 0.0 {
                return 0.0;
            }
            if p != c {
                for j in 0..n {
                    let t = m[(p, j)];
                    m[(p, j)] = m[(c, j)];
                    m[(c, j)] = t;
                }
                d = -d;
            }
            d *= m[(c, c)];
            for r in (c + 1)..n {
                let f = m[(r, c)] / m[(c, c)];
                for j in c..n {
                    m[(r, j)] -= f * m[(c, j)];
                }
            }
        }
        d
    }

    #[test]
    fn packed_indexing_covers_upper_triangle() {
        let n = 5;
        let mut seen = vec![false; n * (n + 1) / 2];
        for i in 0..n {
            for j in i..n {
                let k = packed_index(n, i, j);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(k, packed_index(n, j, i));
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn kron_identity_and_scalar() {
        assert_eq!(
            kron(&DenseMatrix::identity(2), &DenseMatrix::identity(3)),
            DenseMatrix::identity(6)
        );
        let a = DenseMatrix::from_rows(&[vec![2.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(kron(&a, &b).as_slice(), &[6.0]);
    }

    #[test]
    fn kron_spectrum_multiplicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = random_sym(&mut rng, 4);
        let big = kron(&k.to_dense(), &DenseMatrix::identity(3)).sym_part();
        let ek = sym_eig(&k).unwrap().values;
        let eb = sym_eig(&big).unwrap().values;
        let mut expected: Vec<f64> = ek.iter().flat_map(|v| [*v; 3]).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in expected.iter().zip(&eb) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn eig_small_cases() {
        let e = sym_eig(&SymmetricMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let e = sym_eig(&SymmetricMatrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn eig_trace_and_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_sym(&mut rng, 5);
        let e = sym_eig(&s).unwrap();
        let sum: f64 = e.values.iter().sum();
        let prod: f64 = e.values.iter().product();
        assert!((sum - s.trace()).abs() < 1e-12);
        assert!((prod - det(&s.to_dense())).abs() < 1e-12);
    }

    #[test]
    fn positive_definite_cases() {
        assert!(is_positive_definite(&SymmetricMatrix::identity(2), 1e-9));
        let s = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]])
            .unwrap()
            .sym_part();
        assert!(!is_positive_definite(&s, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let r = random_dense(&mut rng, 4, 4);
            let mut s = r.transpose().matmul(&r).unwrap().sym_part();
            s.axpy(1e-3, &SymmetricMatrix::identity(4));
            assert!(is_positive_definite(&s, 1e-6));
        }
    }

    #[test]
    fn operator_norm_cases() {
        assert!((operator_norm(&DenseMatrix::identity(3)) - 1.0).abs() < 1e-15);
        assert!((operator_norm(&DenseMatrix::diag(&[3.0, -4.0])) - 4.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_dense(&mut rng, 4, 4);
        // power iteration on AᵀA
        let g = a.transpose().matmul(&a).unwrap();
        let mut x = vec![1.0; 4];
        let mut lam = 0.0;
        for _ in 0..5000 {
            let y = g.matvec(&x);
            let nrm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            lam = nrm / x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = y.iter().map(|v| v / nrm).collect();
        }
        assert!((operator_norm(&a) - lam.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn operator_norm_2x2_matches_general_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let a = random_dense(&mut rng, 2, 2);
            let g = a.transpose().matmul(&a).unwrap().sym_part();
            let reference = sym_eig(&g).unwrap().values[1].sqrt();
            assert!((operator_norm(&a) - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_roundtrip_and_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = &random_dense(&mut rng, 4, 4) + &DenseMatrix::identity(4).scale(3.0);
        let inv = a.inverse(1e-12).unwrap();
        let prod = a.matmul(&inv).unwrap();
        assert!((&prod - &DenseMatrix::identity(4)).max_abs() < 1e-12);
        let s = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(s.inverse(1e-12), Err(LinalgError::Singular));
    }

    #[test]
    fn cholesky_solve_and_logdet() {
        let s = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]])
            .unwrap()
            .sym_part();
        let ch = Cholesky::factor(&s).unwrap();
        assert!((ch.log_det() - 11f64.ln()).abs() < 1e-14);
        let x = ch.solve(&[1.0, 2.0]);
        let back = s.to_dense().matvec(&x);
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            DenseMatrix::from_row_major(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { row: 0, col: 1 })
        ));
    }
}
