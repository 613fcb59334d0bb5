//! Dense row-major f64 matrices and the forward kernel.
//!
//! Everything downstream (encoders, attention, fusion, the training loop)
//! is built on this small set of operations. All math runs in f64; public
//! operations keep entries finite, which debug builds assert.

use crate::error::{CoreError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense matrix with row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Bit mask with the same addressing as [`Matrix`]. `true` marks a live
/// entry; `false` marks a padded one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        let m = Matrix { rows, cols, data };
        m.debug_check_finite("from_vec");
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }

    /// Identity, useful mostly in tests.
    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Entries drawn uniformly from `(-range, range)` in row-major order.
    pub fn uniform(rows: usize, cols: usize, range: f64, rng: &mut impl Rng) -> Self {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-range..range))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    fn debug_check_finite(&self, op: &str) {
        debug_assert!(self.all_finite(), "non-finite entry after {op}");
    }

    /// Standard product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                detail: format!("{}x{} * {}x{}", self.rows, self.cols, other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (kk, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(kk);
                for (j, &b) in b_row.iter().enumerate() {
                    out_row[j] += a * b;
                }
            }
        }
        out.debug_check_finite("matmul");
        Ok(out)
    }

    /// Product against a transposed right operand: `self * other^T`.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(CoreError::ShapeMismatch {
                op: "matmul_nt",
                detail: format!("{}x{} * ({}x{})^T", self.rows, self.cols, other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += a_row[k] * b_row[k];
                }
                out_row[j] = acc;
            }
        }
        out.debug_check_finite("matmul_nt");
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Element-wise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(CoreError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(), other.shape()),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        let out = Matrix { rows: self.rows, cols: self.cols, data };
        out.debug_check_finite(op);
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * c).collect(),
        };
        out.debug_check_finite("scale");
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Logistic function applied element-wise. Stable for large |x|: the
    /// exponential argument is always non-positive, so nothing overflows.
    pub fn sigmoid(&self) -> Matrix {
        let out = self.map(sigmoid_scalar);
        out.debug_check_finite("sigmoid");
        out
    }

    /// Row-wise softmax over unmasked entries, computed with
    /// max-subtraction. Masked entries get weight exactly 0.
    pub fn row_softmax(&self, mask: &Mask) -> Result<Matrix> {
        if mask.shape() != self.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "row_softmax",
                detail: format!("matrix {:?} vs mask {:?}", self.shape(), mask.shape()),
            });
        }
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            let mut max = f64::NEG_INFINITY;
            for j in 0..self.cols {
                if mask.get(i, j) && row[j] > max {
                    max = row[j];
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(CoreError::FullyMaskedRow { row: i });
            }
            let mut sum = 0.0;
            let out_row = out.row_mut(i);
            for j in 0..self.cols {
                if mask.get(i, j) {
                    let e = (row[j] - max).exp();
                    out_row[j] = e;
                    sum += e;
                }
            }
            for j in 0..self.cols {
                if mask.get(i, j) {
                    out_row[j] /= sum;
                }
            }
        }
        out.debug_check_finite("row_softmax");
        Ok(out)
    }

    /// Vertical concatenation; all parts must share a column count.
    pub fn concat_rows(parts: &[&Matrix]) -> Result<Matrix> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let cols = parts[0].cols;
        for p in parts {
            if p.cols != cols {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("column counts differ: {} vs {}", cols, p.cols),
                });
            }
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Horizontal concatenation; both parts must share a row count.
    pub fn concat_cols(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(CoreError::ShapeMismatch {
                op: "concat_cols",
                detail: format!("row counts differ: {} vs {}", self.rows, other.rows),
            });
        }
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            out.row_mut(i)[..self.cols].copy_from_slice(self.row(i));
            out.row_mut(i)[self.cols..].copy_from_slice(other.row(i));
        }
        Ok(out)
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.rows, "row slice out of range");
        Matrix {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.cols, "column slice out of range");
        Matrix::from_fn(self.rows, len, |i, j| self.get(i, start + j))
    }

    /// Mean over rows flagged live in `mask` (a rows x 1 mask).
    pub fn masked_mean_rows(&self, mask: &Mask) -> Result<Matrix> {
        let live = mask.live_rows_for(self, "masked_mean_rows")?;
        if live.is_empty() {
            return Err(CoreError::FullyMaskedRow { row: 0 });
        }
        let mut out = Matrix::zeros(1, self.cols);
        for &i in &live {
            let row = self.row(i);
            let out_row = out.row_mut(0);
            for j in 0..self.cols {
                out_row[j] += row[j];
            }
        }
        let inv = 1.0 / live.len() as f64;
        Ok(out.scale(inv))
    }

    /// Column-wise max over rows flagged live in `mask`. Returns the max
    /// row vector and, per column, the first row index attaining it.
    pub fn masked_max_rows(&self, mask: &Mask) -> Result<(Matrix, Vec<usize>)> {
        let live = mask.live_rows_for(self, "masked_max_rows")?;
        if live.is_empty() {
            return Err(CoreError::FullyMaskedRow { row: 0 });
        }
        let first = live[0];
        let mut out = self.slice_rows(first, 1);
        let mut argmax = vec![first; self.cols];
        for &i in &live[1..] {
            for j in 0..self.cols {
                let v = self.get(i, j);
                if v > out.get(0, j) {
                    out.set(0, j, v);
                    argmax[j] = i;
                }
            }
        }
        Ok((out, argmax))
    }

    /// Sum of all entries, in row-major order.
    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn clamp_entries(&self, lo: f64, hi: f64) -> Matrix {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Zero out rows flagged dead in `mask` (a rows x 1 mask).
    pub fn zero_masked_rows(&self, mask: &Mask) -> Result<Matrix> {
        mask.check_row_mask_for(self, "zero_masked_rows")?;
        let mut out = self.clone();
        for i in 0..self.rows {
            if !mask.get(i, 0) {
                out.row_mut(i).fill(0.0);
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Mask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), rows * cols, "mask bits must equal rows*cols");
        Mask { rows, cols, bits }
    }

    pub fn all_live(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, bits: vec![true; rows * cols] }
    }

    /// Column mask (rows x 1) from per-row liveness bits.
    pub fn rows_from(bits: Vec<bool>) -> Self {
        let rows = bits.len();
        Mask { rows, cols: 1, bits }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_live(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Broadcast a rows x 1 mask to rows x `cols`.
    pub fn broadcast_cols(&self, cols: usize) -> Mask {
        assert_eq!(self.cols, 1, "broadcast_cols expects a column mask");
        let mut bits = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            bits.extend(std::iter::repeat(self.bits[i]).take(cols));
        }
        Mask { rows: self.rows, cols, bits }
    }

    /// Key mask for attention: every query row sees the same key liveness.
    pub fn key_mask(keys: &Mask, query_rows: usize) -> Mask {
        assert_eq!(keys.cols, 1, "key_mask expects a column mask");
        let mut bits = Vec::with_capacity(query_rows * keys.rows);
        for _ in 0..query_rows {
            bits.extend_from_slice(&keys.bits);
        }
        Mask { rows: query_rows, cols: keys.rows, bits }
    }

    /// Element-wise OR; shapes must agree.
    pub fn or(&self, other: &Mask) -> Mask {
        assert_eq!(self.shape(), other.shape(), "mask shapes must agree");
        Mask {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        }
    }

    pub fn concat(parts: &[&Mask]) -> Mask {
        assert!(!parts.is_empty());
        let cols = parts[0].cols;
        assert!(parts.iter().all(|p| p.cols == cols));
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut bits = Vec::with_capacity(rows * cols);
        for p in parts {
            bits.extend_from_slice(&p.bits);
        }
        Mask { rows, cols, bits }
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Mask {
        assert!(start + len <= self.rows);
        Mask {
            rows: len,
            cols: self.cols,
            bits: self.bits[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    fn check_row_mask_for(&self, m: &Matrix, op: &'static str) -> Result<()> {
        if self.cols != 1 || self.rows != m.rows() {
            return Err(CoreError::ShapeMismatch {
                op,
                detail: format!("mask {:?} vs matrix {:?}", self.shape(), m.shape()),
            });
        }
        Ok(())
    }

    fn live_rows_for(&self, m: &Matrix, op: &'static str) -> Result<Vec<usize>> {
        self.check_row_mask_for(m, op)?;
        Ok((0..self.rows).filter(|&i| self.bits[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identity_matmul_is_identity_map() {
        let mut r = rng::stream(1, "test/matmul");
        let a = Matrix::uniform(4, 4, 1.0, &mut r);
        let id = Matrix::identity(4);
        assert_eq!(id.matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&id).unwrap(), a);
    }

    #[test]
    fn zeros_matmul_is_zero() {
        let mut r = rng::stream(1, "test/matmul0");
        let a = Matrix::uniform(3, 5, 1.0, &mut r);
        let z = Matrix::zeros(2, 3);
        let out = z.matmul(&a).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut r = rng::stream(2, "test/matmul_oracle");
        let a = Matrix::uniform(3, 4, 1.0, &mut r);
        let b = Matrix::uniform(4, 2, 1.0, &mut r);
        let fast = a.matmul(&b).unwrap();
        // naive O(abc) recomputation, independent loop order
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((fast.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(CoreError::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_nt_agrees_with_explicit_transpose() {
        let mut r = rng::stream(3, "test/matmul_nt");
        let a = Matrix::uniform(3, 5, 1.0, &mut r);
        let b = Matrix::uniform(4, 5, 1.0, &mut r);
        let fast = a.matmul_nt(&b).unwrap();
        let slow = a.matmul(&b.transpose()).unwrap();
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let m = Matrix::zeros(2, 2).sigmoid();
        assert!(m.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let m = Matrix::from_vec(1, 3, vec![-700.0, -40.0, 800.0]).sigmoid();
        assert!(m.get(0, 0) >= 0.0 && m.get(0, 0) <= 1e-12);
        assert!(m.get(0, 1) > 0.0 && m.get(0, 1) <= 1e-12);
        assert!(m.get(0, 2) <= 1.0 && m.get(0, 2) > 1.0 - 1e-12);
        assert!(m.all_finite());
    }

    #[test]
    fn sigmoid_matches_extended_recomputation() {
        let mut r = rng::stream(4, "test/sigmoid");
        let m = Matrix::uniform(5, 5, 8.0, &mut r);
        let s = m.sigmoid();
        for (&x, &y) in m.data().iter().zip(s.data()) {
            let direct = 1.0 / (1.0 + (-x).exp());
            assert!((y - direct).abs() <= 1e-15 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn row_softmax_uniform_row() {
        let m = Matrix::from_vec(1, 4, vec![2.5; 4]);
        let w = m.row_softmax(&Mask::all_live(1, 4)).unwrap();
        for &v in w.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn row_softmax_single_unmasked_entry_gets_full_weight() {
        let m = Matrix::from_vec(1, 2, vec![0.3, 99.0]);
        let mask = Mask::new(1, 2, vec![true, false]);
        let w = m.row_softmax(&mask).unwrap();
        assert_eq!(w.get(0, 0), 1.0);
        assert_eq!(w.get(0, 1), 0.0);
    }

    #[test]
    fn row_softmax_fully_masked_row_errors() {
        let m = Matrix::zeros(2, 2);
        let mask = Mask::new(2, 2, vec![true, true, false, false]);
        assert!(matches!(m.row_softmax(&mask), Err(CoreError::FullyMaskedRow { row: 1 })));
    }

    #[test]
    fn row_softmax_rows_sum_to_one() {
        let mut r = rng::stream(5, "test/softmax");
        let m = Matrix::uniform(5, 7, 4.0, &mut r);
        let bits: Vec<bool> = (0..35).map(|i| i % 3 != 1).collect();
        let mask = Mask::new(5, 7, bits);
        let w = m.row_softmax(&mask).unwrap();
        for i in 0..5 {
            let sum: f64 = w.row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            for j in 0..7 {
                if !mask.get(i, j) {
                    assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn masked_mean_is_mean_of_live_rows() {
        let m = Matrix::from_vec(3, 2, vec![1.0, 2.0, 10.0, 20.0, 3.0, 4.0]);
        let mask = Mask::rows_from(vec![true, false, true]);
        let mean = m.masked_mean_rows(&mask).unwrap();
        assert_eq!(mean.row(0), &[2.0, 3.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut r = rng::stream(6, "test/concat");
        let a = Matrix::uniform(2, 3, 1.0, &mut r);
        let b = Matrix::uniform(4, 3, 1.0, &mut r);
        let c = Matrix::concat_rows(&[&a, &b]).unwrap();
        assert_eq!(c.slice_rows(0, 2), a);
        assert_eq!(c.slice_rows(2, 4), b);
        let d = a.concat_cols(&a).unwrap();
        assert_eq!(d.slice_cols(0, 3), a);
        assert_eq!(d.slice_cols(3, 3), a);
    }
}
