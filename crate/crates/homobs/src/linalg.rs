//! Dense matrix kernels used by the rest of the crate.
//!
//! Everything here works on small dense matrices (dimension at most a few
//! dozen), so the implementations favor clarity and determinism over
//! asymptotic speed: cyclic Jacobi for symmetric eigenproblems, scaling and
//! squaring for the exponential, Householder reduction plus explicit
//! double-shift QR for the spectral abscissa of non-symmetric matrices.

use serde::{Deserialize, Serialize};

use crate::tol;

#[derive(Debug, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix must have positive dimensions, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
}

/// Dense row-major matrix of `f64` with strictly positive dimensions and
/// finite entries (both enforced at construction).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = LinalgError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        (0..m.rows)
            .map(|i| m.data[i * m.cols..(i + 1) * m.cols].to_vec())
            .collect()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn try_new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::BadShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, LinalgError> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
        if nrows == 0 || ncols == 0 {
            return Err(LinalgError::BadShape { rows: nrows, cols: ncols });
        }
        let mut data = Vec::with_capacity(nrows * ncols);
        for row in &rows {
            if row.len() != ncols {
                return Err(LinalgError::DimensionMismatch(
                    "rows have unequal lengths".to_string(),
                ));
            }
            data.extend_from_slice(row);
        }
        Matrix::try_new(nrows, ncols, data)
    }

    /// Builds a matrix whose columns are the given equal-length vectors.
    pub fn from_cols(cols: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let ncols = cols.len();
        let nrows = cols.first().map(|c| c.len()).unwrap_or(0);
        if nrows == 0 || ncols == 0 {
            return Err(LinalgError::BadShape { rows: nrows, cols: ncols });
        }
        if cols.iter().any(|c| c.len() != nrows) {
            return Err(LinalgError::DimensionMismatch(
                "columns have unequal lengths".to_string(),
            ));
        }
        Ok(Matrix::from_fn(nrows, ncols, |i, j| cols[j][i]))
    }

    /// Column vector from a slice.
    pub fn column(v: &[f64]) -> Self {
        assert!(!v.is_empty(), "column vector must be non-empty");
        Matrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
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

    pub fn row_slice(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row index out of bounds");
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col_vec(&self, j: usize) -> Vec<f64> {
        assert!(j < self.cols, "column index out of bounds");
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.data[j * self.cols + i])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a_ik = self.data[i * self.cols + k];
                if a_ik == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, o) in dst.iter_mut().zip(orow) {
                    *d += a_ik * o;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.add_scaled(other, -1.0)
    }

    /// Returns `self + c * other`.
    pub fn add_scaled(&self, other: &Matrix, c: f64) -> Matrix {
        assert!(
            self.rows == other.rows && self.cols == other.cols,
            "elementwise shape mismatch"
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + c * b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols, "mul_vec shape mismatch");
        assert_eq!(out.len(), self.rows, "mul_vec output shape mismatch");
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square(), "trace requires a square matrix");
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert!(
            self.rows == other.rows && self.cols == other.cols,
            "elementwise shape mismatch"
        );
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of bounds");
        Matrix::from_fn(rows, cols, |i, j| self.data[(r0 + i) * self.cols + c0 + j])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, m: &Matrix) {
        assert!(
            r0 + m.rows <= self.rows && c0 + m.cols <= self.cols,
            "block out of bounds"
        );
        for i in 0..m.rows {
            for j in 0..m.cols {
                self.data[(r0 + i) * self.cols + c0 + j] = m.data[i * m.cols + j];
            }
        }
    }

    fn is_diagonal(&self) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in 0..self.cols {
                if i != j && self.data[i * self.cols + j] != 0.0 {
                    return false;
                }
            }
        }
        true
    }
}

/// Matrix exponential by scaling and squaring around a fixed-degree Taylor
/// series. The argument is halved until its Frobenius norm is at most
/// [`tol::MAT_EXP_NORM_MAX`]; diagonal matrices take an exact closed form.
pub fn mat_exp(a: &Matrix) -> Result<Matrix, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(
            "matrix exponential requires a square matrix".to_string(),
        ));
    }
    let n = a.rows();
    if a.is_diagonal() {
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = a[(i, i)].exp();
        }
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        return Ok(out);
    }
    let norm = a.frobenius_norm();
    let squarings = if norm <= tol::MAT_EXP_NORM_MAX {
        0
    } else {
        (norm / tol::MAT_EXP_NORM_MAX).log2().ceil() as i32
    };
    let s = a.scaled(0.5f64.powi(squarings));
    // Horner evaluation of the truncated series sum_{j<=D} S^j / j!.
    let ident = Matrix::identity(n);
    let mut acc = ident.clone();
    for d in (1..=tol::MAT_EXP_DEGREE).rev() {
        acc = ident.add_scaled(&s.matmul(&acc), 1.0 / d as f64);
    }
    for _ in 0..squarings {
        acc = acc.matmul(&acc);
    }
    if acc.data.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(acc)
}

/// Eigendecomposition of a symmetric matrix: `values` ascending and
/// `vectors` holding the matching orthonormal eigenvectors as columns. Each
/// column's sign is fixed so its largest-magnitude entry (first such index
/// on ties) is non-negative, making results reproducible across runs.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigensolver for symmetric matrices. The input is
/// symmetrized as `(A + A^T)/2` before iterating, so mild rounding-level
/// asymmetry from upstream products is harmless.
pub fn sym_eig(a: &Matrix) -> Result<SymEig, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(
            "symmetric eigensolver requires a square matrix".to_string(),
        ));
    }
    let n = a.rows();
    let mut b = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let scale = b.frobenius_norm().max(1.0);
    let mut converged = false;
    for _ in 0..tol::JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += b[(i, j)] * b[(i, j)];
                }
            }
        }
        if off.sqrt() <= tol::JACOBI_OFFDIAG_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let bpq = b[(p, q)];
                if bpq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let tau = (b[(q, q)] - b[(p, p)]) / (2.0 * bpq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let bpp = b[(p, p)];
                let bqq = b[(q, q)];
                for k in 0..n {
                    if k != p && k != q {
                        let bkp = b[(k, p)];
                        let bkq = b[(k, q)];
                        b[(k, p)] = c * bkp - s * bkq;
                        b[(p, k)] = b[(k, p)];
                        b[(k, q)] = s * bkp + c * bkq;
                        b[(q, k)] = b[(k, q)];
                    }
                }
                b[(p, p)] = c * c * bpp - 2.0 * s * c * bpq + s * s * bqq;
                b[(q, q)] = s * s * bpp + 2.0 * s * c * bpq + c * c * bqq;
                b[(p, q)] = 0.0;
                b[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        // One final check: the last sweep may have finished the job.
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += b[(i, j)] * b[(i, j)];
                }
            }
        }
        if off.sqrt() > tol::JACOBI_OFFDIAG_TOL * scale {
            return Err(LinalgError::NoConvergence);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| b[(i, i)].partial_cmp(&b[(j, j)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| b[(i, i)]).collect();
    let mut vectors = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    for j in 0..n {
        let mut best = 0;
        let mut best_abs = 0.0;
        for i in 0..n {
            let a_ij = vectors[(i, j)].abs();
            if a_ij > best_abs {
                best_abs = a_ij;
                best = i;
            }
        }
        if vectors[(best, j)] < 0.0 {
            for i in 0..n {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
    Ok(SymEig { values, vectors })
}

pub fn min_symmetric_eigenvalue(a: &Matrix) -> Result<f64, LinalgError> {
    Ok(sym_eig(a)?.values[0])
}

pub fn max_symmetric_eigenvalue(a: &Matrix) -> Result<f64, LinalgError> {
    let eig = sym_eig(a)?;
    Ok(*eig.values.last().expect("eigenvalues are non-empty"))
}

/// Checks that the symmetric part of `a` has all eigenvalues above `margin`.
pub fn is_positive_definite(a: &Matrix, margin: f64) -> Result<bool, LinalgError> {
    Ok(min_symmetric_eigenvalue(a)? > margin)
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows() * b.rows(), a.cols() * b.cols(), |i, j| {
        let (ia, ib) = (i / b.rows(), i % b.rows());
        let (ja, jb) = (j / b.cols(), j % b.cols());
        a[(ia, ja)] * b[(ib, jb)]
    })
}

/// Weighted Euclidean norm `sqrt(x^T P x)` for symmetric positive definite
/// `P`. Tiny negative quadratic forms from rounding are clamped to zero.
pub fn weighted_norm(p: &Matrix, x: &[f64]) -> f64 {
    assert!(p.is_square() && p.rows() == x.len(), "weighted_norm shape mismatch");
    let px = p.mul_vec(x);
    let q: f64 = x.iter().zip(&px).map(|(a, b)| a * b).sum();
    q.max(0.0).sqrt()
}

/// Pseudoinverse of a symmetric positive semidefinite matrix, treating
/// eigenvalues below `rel_tol` times the largest magnitude as zero.
pub fn pinv_symmetric_psd(a: &Matrix, rel_tol: f64) -> Result<Matrix, LinalgError> {
    let eig = sym_eig(a)?;
    let lead = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam.abs() <= rel_tol * lead || lam == 0.0 {
            continue;
        }
        let inv = 1.0 / lam;
        for i in 0..n {
            let vi = eig.vectors[(i, k)];
            if vi == 0.0 {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += inv * vi * eig.vectors[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Minimum-norm least-squares solution of `A X = B` (any shape, any rank):
/// among all `X` minimizing the residual, returns the one with smallest
/// Frobenius norm. Built from the Gram pseudoinverse, using the identities
/// `pinv(A) = pinv(A^T A) A^T = A^T pinv(A A^T)`.
pub fn solve_least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.rows() != b.rows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "least squares: A has {} rows but B has {}",
            a.rows(),
            b.rows()
        )));
    }
    let at = a.transpose();
    if a.rows() >= a.cols() {
        let gram = at.matmul(a);
        let pinv = pinv_symmetric_psd(&gram, tol::RANK_REL_TOL)?;
        Ok(pinv.matmul(&at.matmul(b)))
    } else {
        let gram = a.matmul(&at);
        let pinv = pinv_symmetric_psd(&gram, tol::RANK_REL_TOL)?;
        Ok(at.matmul(&pinv.matmul(b)))
    }
}

/// Tests whether `A^n` vanishes (n = dimension). The check is performed on
/// the matrix scaled to unit Frobenius norm, so it is scale invariant.
pub fn is_nilpotent(a: &Matrix) -> Result<bool, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(
            "nilpotency requires a square matrix".to_string(),
        ));
    }
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return Ok(true);
    }
    let unit = a.scaled(1.0 / norm);
    let mut power = unit.clone();
    for _ in 1..a.rows() {
        power = power.matmul(&unit);
    }
    Ok(power.frobenius_norm() <= tol::NILPOTENT_TOL)
}

struct LuFactors {
    lu: Matrix,
    piv: Vec<usize>,
    det_sign: f64,
}

fn lu_factor(a: &Matrix) -> Result<LuFactors, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(
            "LU factorization requires a square matrix".to_string(),
        ));
    }
    let n = a.rows();
    let mut lu = a.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    let mut det_sign = 1.0;
    let scale = a.max_abs().max(1.0);
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best <= f64::EPSILON * scale * n as f64 {
            return Err(LinalgError::Singular);
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            piv.swap(k, p);
            det_sign = -det_sign;
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let factor = lu[(i, k)] / pivot;
            lu[(i, k)] = factor;
            for j in k + 1..n {
                lu[(i, j)] -= factor * lu[(k, j)];
            }
        }
    }
    Ok(LuFactors { lu, piv, det_sign })
}

fn lu_solve_factored(f: &LuFactors, b: &[f64]) -> Vec<f64> {
    let n = f.lu.rows();
    assert_eq!(b.len(), n, "right-hand side length mismatch");
    let mut x: Vec<f64> = f.piv.iter().map(|&p| b[p]).collect();
    for i in 1..n {
        for j in 0..i {
            x[i] -= f.lu[(i, j)] * x[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] -= f.lu[(i, j)] * x[j];
        }
        x[i] /= f.lu[(i, i)];
    }
    x
}

/// Solves `A x = b` by LU factorization with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if b.len() != a.rows() {
        return Err(LinalgError::DimensionMismatch(
            "right-hand side length does not match matrix".to_string(),
        ));
    }
    let f = lu_factor(a)?;
    Ok(lu_solve_factored(&f, b))
}

/// Solves `A X = B` column by column.
pub fn solve_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if b.rows() != a.rows() {
        return Err(LinalgError::DimensionMismatch(
            "right-hand side rows do not match matrix".to_string(),
        ));
    }
    let f = lu_factor(a)?;
    let cols: Vec<Vec<f64>> = (0..b.cols())
        .map(|j| lu_solve_factored(&f, &b.col_vec(j)))
        .collect();
    Matrix::from_cols(&cols)
}

pub fn inverse(a: &Matrix) -> Result<Matrix, LinalgError> {
    solve_matrix(a, &Matrix::identity(a.rows()))
}

pub fn determinant(a: &Matrix) -> Result<f64, LinalgError> {
    match lu_factor(a) {
        Ok(f) => {
            let mut det = f.det_sign;
            for i in 0..f.lu.rows() {
                det *= f.lu[(i, i)];
            }
            Ok(det)
        }
        Err(LinalgError::Singular) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Householder reduction to upper Hessenberg form (similarity transform, so
/// the spectrum is preserved).
pub fn hessenberg(a: &Matrix) -> Result<Matrix, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(
            "Hessenberg reduction requires a square matrix".to_string(),
        ));
    }
    let n = a.rows();
    let mut h = a.clone();
    if n < 3 {
        return Ok(h);
    }
    for k in 0..n - 2 {
        let mut v: Vec<f64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let alpha = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if alpha <= f64::MIN_POSITIVE {
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 <= f64::MIN_POSITIVE {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // Left multiplication by I - beta v v^T on rows k+1..n.
        for j in 0..n {
            let w: f64 = (k + 1..n).map(|i| v[i - k - 1] * h[(i, j)]).sum();
            for i in k + 1..n {
                h[(i, j)] -= beta * w * v[i - k - 1];
            }
        }
        // Right multiplication on columns k+1..n.
        for i in 0..n {
            let w: f64 = (k + 1..n).map(|j| h[(i, j)] * v[j - k - 1]).sum();
            for j in k + 1..n {
                h[(i, j)] -= beta * w * v[j - k - 1];
            }
        }
        for i in k + 2..n {
            h[(i, k)] = 0.0;
        }
    }
    Ok(h)
}

/// Orthogonal factor of a Householder QR factorization.
fn qr_q(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut r = m.clone();
    let mut q = Matrix::identity(n);
    for k in 0..n.saturating_sub(1) {
        let mut v: Vec<f64> = (k..n).map(|i| r[(i, k)]).collect();
        let alpha = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if alpha <= f64::MIN_POSITIVE {
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 <= f64::MIN_POSITIVE {
            continue;
        }
        let beta = 2.0 / vnorm2;
        for j in k..n {
            let w: f64 = (k..n).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..n {
                r[(i, j)] -= beta * w * v[i - k];
            }
        }
        // Accumulate Q = H_0 H_1 ... by right multiplication.
        for i in 0..n {
            let w: f64 = (k..n).map(|j| q[(i, j)] * v[j - k]).sum();
            for j in k..n {
                q[(i, j)] -= beta * w * v[j - k];
            }
        }
    }
    q
}

fn two_by_two_real_parts(a: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
    let mid = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (mid + s, mid - s)
    } else {
        (mid, mid)
    }
}

/// One explicit double-shift QR step on an unreduced Hessenberg block. The
/// shift pair comes from the trailing 2x2 submatrix; `exceptional` swaps in
/// the classical ad-hoc shifts used to break symmetric-spectrum stagnation.
fn double_shift_step(b: &mut Matrix, exceptional: bool) {
    let k = b.rows();
    debug_assert!(k >= 3);
    let (s, p) = if exceptional {
        let w = b[(k - 1, k - 2)].abs() + b[(k - 2, k - 3)].abs();
        (1.5 * w, -0.4375 * w * w)
    } else {
        let a_ = b[(k - 2, k - 2)];
        let b_ = b[(k - 2, k - 1)];
        let c_ = b[(k - 1, k - 2)];
        let d_ = b[(k - 1, k - 1)];
        (a_ + d_, a_ * d_ - b_ * c_)
    };
    let mut m = b.matmul(b);
    m = m.add_scaled(b, -s);
    for i in 0..k {
        m[(i, i)] += p;
    }
    let q = qr_q(&m);
    *b = q.transpose().matmul(b).matmul(&q);
    // In exact arithmetic the similarity preserves Hessenberg form; discard
    // the rounding-level fill below the subdiagonal.
    for i in 2..k {
        for j in 0..i - 1 {
            b[(i, j)] = 0.0;
        }
    }
}

/// Largest real part over all eigenvalues (the spectral abscissa), computed
/// by Hessenberg reduction and explicit double-shift QR with deflation.
pub fn max_real_eigenvalue(a: &Matrix) -> Result<f64, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(
            "spectral abscissa requires a square matrix".to_string(),
        ));
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let n = a.rows();
    if n == 1 {
        return Ok(a[(0, 0)]);
    }
    let mut h = hessenberg(a)?;
    let overall = h.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut max_re = f64::NEG_INFINITY;
    let mut hi = n - 1;
    let mut total_iters = 0usize;
    let mut since_deflation = 0usize;
    loop {
        if hi == 0 {
            max_re = max_re.max(h[(0, 0)]);
            break;
        }
        for i in 1..=hi {
            let thresh =
                f64::EPSILON * (h[(i - 1, i - 1)].abs() + h[(i, i)].abs()).max(overall * 1e-3);
            if h[(i, i - 1)].abs() <= thresh {
                h[(i, i - 1)] = 0.0;
            }
        }
        let mut l = hi;
        while l > 0 && h[(l, l - 1)] != 0.0 {
            l -= 1;
        }
        let size = hi - l + 1;
        if size == 1 {
            max_re = max_re.max(h[(hi, hi)]);
            since_deflation = 0;
            hi -= 1;
            continue;
        }
        if size == 2 {
            let (r1, r2) =
                two_by_two_real_parts(h[(l, l)], h[(l, l + 1)], h[(l + 1, l)], h[(l + 1, l + 1)]);
            max_re = max_re.max(r1).max(r2);
            since_deflation = 0;
            if l == 0 {
                break;
            }
            hi = l - 1;
            continue;
        }
        if total_iters >= tol::QR_MAX_ITERS {
            return Err(LinalgError::NoConvergence);
        }
        let mut block = h.block(l, l, size, size);
        let exceptional = since_deflation > 0 && since_deflation % 16 == 0;
        double_shift_step(&mut block, exceptional);
        h.set_block(l, l, &block);
        total_iters += 1;
        since_deflation += 1;
    }
    Ok(max_re)
}
