use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::TensorBlob;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TensorBlob", try_from = "TensorBlob")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Whether a gemm operand is read as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

impl DenseMatrix {
    /// Builds a matrix, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite matrix entry at {pos}")));
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.matmul_op(Op::N, other, Op::N)
    }

    /// `op(self) · op(other)`.
    pub fn matmul_op(&self, a_op: Op, other: &DenseMatrix, b_op: Op) -> Result<DenseMatrix> {
        let (m, k) = op_shape(self.shape(), a_op);
        let (k2, n) = op_shape(other.shape(), b_op);
        if k != k2 {
            return Err(Error::config(format!(
                "matmul inner dimensions differ: {m}x{k} · {k2}x{n}"
            )));
        }
        let mut out = DenseMatrix::zeros(m, n);
        gemm(1.0, self.view(a_op), other.view(b_op), 0.0, out.view_mut());
        Ok(out)
    }

    pub fn view(&self, op: Op) -> MatRef<'_> {
        let v = MatRef {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
        };
        match op {
            Op::N => v,
            Op::T => v.t(),
        }
    }

    pub fn view_mut(&mut self) -> MatMut<'_> {
        MatMut {
            rows: self.rows,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
            data: &mut self.data,
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DenseMatrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|a| *a = v);
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn op_shape((r, c): (usize, usize), op: Op) -> (usize, usize) {
    match op {
        Op::N => (r, c),
        Op::T => (c, r),
    }
}

/// Borrowed strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

/// Mutable strided matrix view.
#[derive(Debug)]
pub struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    /// Row-major view of a contiguous slice.
    pub fn from_slice(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "slice too short for view");
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    /// Column block `[c0, c0 + width)`.
    pub fn cols_range(self, c0: usize, width: usize) -> Self {
        assert!(c0 + width <= self.cols, "column block out of range");
        let offset = (c0 as isize * self.cs) as usize;
        Self {
            data: &self.data[offset..],
            rows: self.rows,
            cols: width,
            rs: self.rs,
            cs: self.cs,
        }
    }

    /// Row block `[r0, r0 + height)`.
    pub fn rows_range(self, r0: usize, height: usize) -> Self {
        assert!(r0 + height <= self.rows, "row block out of range");
        let offset = (r0 as isize * self.rs) as usize;
        Self {
            data: &self.data[offset..],
            rows: height,
            cols: self.cols,
            rs: self.rs,
            cs: self.cs,
        }
    }

    fn check(&self) {
        check_extent(self.data.len(), self.rows, self.cols, self.rs, self.cs);
    }
}

impl<'a> MatMut<'a> {
    pub fn from_slice(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "slice too short for view");
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn cols_range(self, c0: usize, width: usize) -> Self {
        assert!(c0 + width <= self.cols, "column block out of range");
        let offset = (c0 as isize * self.cs) as usize;
        Self {
            data: &mut self.data[offset..],
            rows: self.rows,
            cols: width,
            rs: self.rs,
            cs: self.cs,
        }
    }

    fn check(&self) {
        check_extent(self.data.len(), self.rows, self.cols, self.rs, self.cs);
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "strided view exceeds its slice");
}

/// `c = alpha · a · b + beta · c` on strided views.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    assert_eq!(a.rows, c.rows, "gemm output rows mismatch");
    assert_eq!(b.cols, c.cols, "gemm output cols mismatch");
    a.check();
    b.check();
    c.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: every view was checked above to address only elements inside its
    // slice, `c` is uniquely borrowed and cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr(),
            c.rs,
            c.cs,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::SeededRng;

    fn naive(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |r, c| {
            (0..a.cols()).map(|k| a.get(r, k) * b.get(k, c)).sum()
        })
    }

    fn random(rng: &mut SeededRng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn matmul_matches_naive_with_transposes() {
        let mut rng = SeededRng::new(7);
        let a = random(&mut rng, 5, 3);
        let b = random(&mut rng, 3, 4);
        let expect = naive(&a, &b);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&expect) < 1e-14);
        let at = a.transpose();
        let bt = b.transpose();
        let got = at.matmul_op(Op::T, &bt, Op::T).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-14);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn matmul_is_associative_on_16x16() {
        let mut rng = SeededRng::new(42);
        for _ in 0..5 {
            let a = random(&mut rng, 16, 16);
            let b = random(&mut rng, 16, 16);
            let c = random(&mut rng, 16, 16);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            assert!(left.max_abs_diff(&right) < 1e-9);
        }
    }

    #[test]
    fn column_block_views() {
        let a = DenseMatrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let eye = DenseMatrix::identity(2);
        let mut out = DenseMatrix::zeros(3, 2);
        gemm(
            1.0,
            a.view(Op::N).cols_range(1, 2),
            eye.view(Op::N),
            0.0,
            out.view_mut(),
        );
        assert_eq!(out.row(2), &[9.0, 10.0]);
    }
}
