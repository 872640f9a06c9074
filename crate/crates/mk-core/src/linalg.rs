//! Dense row-major matrices and rank-3 tensors, 64-bit floats only.
//!
//! Reduction order is part of the contract: every contracted index is
//! accumulated strictly left to right (ascending), so repeated calls on equal
//! inputs are bit-identical and results do not depend on build flags or call
//! sites. There is deliberately no BLAS, no SIMD intrinsics, and no
//! parallelism here; the loops are arranged so the compiler can vectorize
//! the independent (non-reduced) dimension without touching the reduction
//! order.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`.
///
/// Entries are expected to be finite; boundary code (checkpoint loading,
/// optimizer gradient screening) enforces this, hot paths do not re-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Matrix filled with one value.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds from a row-major data vector. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "Matrix::from_vec: data length {} != {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    /// Builds entry-wise from `f(row, col)` in row-major order.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * rhs`.
    ///
    /// Each output cell `(i, j)` accumulates `a[i][k] * b[k][j]` for `k`
    /// strictly ascending; that order is frozen.
    ///
    /// Panics on an inner-dimension mismatch.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: inner dimensions differ ({}x{} * {}x{})",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = rhs.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        out
    }

    /// `self^T * rhs`, without materializing the transpose.
    ///
    /// Per output cell the reduction over `k` (rows of both operands) is
    /// ascending, identical to `self.transpose().matmul(rhs)` bit for bit.
    pub fn t_matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, rhs.rows,
            "t_matmul: row counts differ ({}x{} vs {}x{})",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = rhs.row(k);
            for (i, &a_ki) in a_row.iter().enumerate() {
                let out_row = out.row_mut(i);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ki * b_kj;
                }
            }
        }
        out
    }

    /// `self * rhs^T`, without materializing the transpose.
    ///
    /// Per output cell the reduction over `k` (columns of both operands) is
    /// ascending, identical to `self.matmul(&rhs.transpose())` bit for bit.
    pub fn matmul_t(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.cols,
            "matmul_t: column counts differ ({}x{} vs {}x{})",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = rhs.row(j);
                let mut acc = 0.0;
                for (&a_ik, &b_jk) in a_row.iter().zip(b_row) {
                    acc += a_ik * b_jk;
                }
                *o = acc;
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Entry-wise map into a new matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self += alpha * other`, entry-wise.
    pub fn add_scaled(&mut self, other: &Matrix, alpha: f64) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "add_scaled: shape mismatch"
        );
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Column sums, accumulated over rows in ascending order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Largest absolute entry difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "max_abs_diff: shape mismatch"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|&a| a.abs()).fold(0.0, f64::max)
    }
}

/// Dense rank-3 tensor of `f64`, shape `n x m x e`.
///
/// Layout: the last index varies fastest, so the length-`e` fiber at a fixed
/// `(i, j)` is contiguous. That fiber is the natural unit here: it holds
/// the `e` slice values (or slice probabilities) of one weight entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    n: usize,
    m: usize,
    e: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, m: usize, e: usize) -> Self {
        Tensor3 {
            n,
            m,
            e,
            data: vec![0.0; n * m * e],
        }
    }

    pub fn filled(n: usize, m: usize, e: usize, value: f64) -> Self {
        Tensor3 {
            n,
            m,
            e,
            data: vec![value; n * m * e],
        }
    }

    /// Builds from a data vector laid out with `k` fastest, then `j`, then
    /// `i`. Panics if the length is wrong.
    pub fn from_vec(n: usize, m: usize, e: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            n * m * e,
            "Tensor3::from_vec: data length {} != {}x{}x{}",
            data.len(),
            n,
            m,
            e
        );
        Tensor3 { n, m, e, data }
    }

    /// Builds entry-wise from `f(i, j, k)` with `k` varying fastest.
    pub fn from_fn(n: usize, m: usize, e: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * m * e);
        for i in 0..n {
            for j in 0..m {
                for k in 0..e {
                    data.push(f(i, j, k));
                }
            }
        }
        Tensor3 { n, m, e, data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.e)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn e(&self) -> usize {
        self.e
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert!(i < self.n && j < self.m && k < self.e);
        self.data[(i * self.m + j) * self.e + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        debug_assert!(i < self.n && j < self.m && k < self.e);
        self.data[(i * self.m + j) * self.e + k] = v;
    }

    /// The contiguous length-`e` fiber at `(i, j)`.
    #[inline]
    pub fn fiber(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.m + j) * self.e;
        &self.data[base..base + self.e]
    }

    #[inline]
    pub fn fiber_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let base = (i * self.m + j) * self.e;
        &mut self.data[base..base + self.e]
    }

    /// Copies slice `k` out as an `n x m` matrix.
    pub fn slice_matrix(&self, k: usize) -> Matrix {
        assert!(k < self.e, "slice_matrix: slice {} out of {}", k, self.e);
        Matrix::from_fn(self.n, self.m, |i, j| self.get(i, j, k))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}
