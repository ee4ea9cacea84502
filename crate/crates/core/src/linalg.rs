//! Dense row-major matrices and the handful of decompositions the erasers need.
//!
//! Eigen and singular value decompositions are delegated to `faer`; the
//! rest (products, covariance, square root, pseudoinverse) is built on top of
//! them here so that the numerical conventions (clamping, cutoffs, population
//! normalisation) live in one place.

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular value cutoff used by [`pinv`].
pub const PINV_RCOND: f64 = 1e-10;

/// Eigenvalues above `-PSD_TOLERANCE` (scaled by the spectral radius when it
/// exceeds one) are treated as rounding noise and clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Builds a matrix from a closure over `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, x)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Per-column arithmetic mean.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = rel_tol * self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.rows).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Numerical rank: singular values above `PINV_RCOND * sigma_max`.
    pub fn rank(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        let Ok(s) = to_faer(self).singular_values() else {
            return 0;
        };
        let max = s.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return 0;
        }
        s.iter().filter(|v| **v > PINV_RCOND * max).count()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn to_faer(m: &Matrix) -> Mat<f64> {
    Mat::from_fn(m.rows, m.cols, |i, j| m.get(i, j))
}

/// Eigendecomposition of a symmetric matrix. Eigenvalues are returned in
/// ascending order; column `k` of the returned matrix is the eigenvector for
/// eigenvalue `k`.
pub fn sym_eig(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigendecomposition of non-square {}x{} matrix",
            m.rows, m.cols
        )));
    }
    if !m.is_symmetric(SYMMETRY_TOLERANCE) {
        return Err(Error::Dimension("matrix is not symmetric".into()));
    }
    let n = m.rows;
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    // Average out the asymmetric rounding before handing it to the solver.
    let sym = Matrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let eig = to_faer(&sym)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NonFinite("eigendecomposition"))?;
    let (lambda, u) = (eig.S(), eig.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lambda[a].total_cmp(&lambda[b]));
    let values = order.iter().map(|&k| lambda[k]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    Ok((values, vectors))
}

/// Reassembles `V diag(f(λ)) Vᵀ`.
fn spectral_map(values: &[f64], vectors: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let n = values.len();
    let mapped: Vec<f64> = values.iter().map(|&v| f(v)).collect();
    Matrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| vectors.get(i, k) * mapped[k] * vectors.get(j, k))
            .sum()
    })
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    let (values, vectors) = sym_eig(m)?;
    let scale = values.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    if let Some(&bad) = values.iter().find(|&&v| v < -PSD_TOLERANCE * scale) {
        return Err(Error::NotPsd(bad));
    }
    Ok(spectral_map(&values, &vectors, |v| v.max(0.0).sqrt()))
}

/// Moore–Penrose pseudoinverse via SVD, discarding singular values at or
/// below `PINV_RCOND * sigma_max`.
pub fn pinv(m: &Matrix) -> Result<Matrix> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pinv input"));
    }
    if m.rows == 0 || m.cols == 0 {
        return Ok(Matrix::zeros(m.cols, m.rows));
    }
    let svd = to_faer(m)
        .thin_svd()
        .map_err(|_| Error::NonFinite("singular value decomposition"))?;
    let (u, sv, v) = (svd.U(), svd.S(), svd.V());
    let k = m.rows.min(m.cols);
    let sigma_max = (0..k).map(|s| sv[s]).fold(0.0, f64::max);
    let cutoff = PINV_RCOND * sigma_max;
    let mut out = Matrix::zeros(m.cols, m.rows);
    for s in 0..k {
        let sigma = sv[s];
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        let inv = 1.0 / sigma;
        for i in 0..m.cols {
            let vi = v[(i, s)] * inv;
            if vi == 0.0 {
                continue;
            }
            let row = out.row_mut(i);
            for (j, o) in row.iter_mut().enumerate() {
                *o += vi * u[(j, s)];
            }
        }
    }
    Ok(out)
}

/// Population cross-covariance `(1/n) (X − mean X)ᵀ (Z − mean Z)`.
pub fn cross_covariance(x: &Matrix, z: &Matrix) -> Result<Matrix> {
    if x.rows != z.rows {
        return Err(Error::Dimension(format!(
            "{} rows vs {} rows",
            x.rows, z.rows
        )));
    }
    let n = x.rows;
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let mx = x.column_means();
    let mz = z.column_means();
    let mut out = Matrix::zeros(x.cols, z.cols);
    let mut dz = vec![0.0; z.cols];
    for r in 0..n {
        for (d, (v, m)) in dz.iter_mut().zip(z.row(r).iter().zip(&mz)) {
            *d = v - m;
        }
        for (i, (v, m)) in x.row(r).iter().zip(&mx).enumerate() {
            let dx = v - m;
            if dx == 0.0 {
                continue;
            }
            for (o, d) in out.row_mut(i).iter_mut().zip(&dz) {
                *o += dx * d;
            }
        }
    }
    Ok(out.scale(1.0 / n as f64))
}
