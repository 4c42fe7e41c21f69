//! Dense row-major `f64` tensors and the handful of matrix kernels the
//! networks need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor (or the length of a 1-D one).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// A borrowed matrix view with arbitrary strides (used for free transposes).
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// A view with explicit strides; `data` starts at the first element.
    pub fn strided(data: &'a [f64], rows: usize, cols: usize, row_stride: usize, col_stride: usize) -> Self {
        debug_assert!(rows == 0 || cols == 0 || data.len() > (rows - 1) * row_stride + (cols - 1) * col_stride);
        Self {
            data,
            rows,
            cols,
            row_stride: row_stride as isize,
            col_stride: col_stride as isize,
        }
    }

    pub fn of(t: &'a Tensor) -> Self {
        let cols = t.cols();
        Self::new(&t.data, t.len() / cols.max(1), cols)
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = alpha * a * b + beta * c`, with `c` row-major `a.rows x b.cols`.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    gemm_ld(alpha, a, b, beta, c, b.cols);
}

/// As [`gemm`], but `c` has row stride `ldc` (to write into a column block).
pub fn gemm_ld(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(ldc >= n && c.len() >= (m - 1) * ldc + n, "gemm output too small");
    if k == 0 {
        for r in 0..m {
            c[r * ldc..r * ldc + n].iter_mut().for_each(|x| *x *= beta);
        }
        return;
    }
    if m <= 2 {
        thin_gemm(alpha, a, b, beta, c, ldc);
        return;
    }
    // SAFETY: the views were built from slices long enough for their
    // dimensions and strides, and `c` holds at least m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

impl MatRef<'_> {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.row_stride as usize + c * self.col_stride as usize]
    }
}

/// Row-at-a-time product for one or two rows, where the packed kernel would
/// mostly multiply padding.
fn thin_gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    let (k, n) = (a.cols, b.cols);
    let (brs, bcs) = (b.row_stride as usize, b.col_stride as usize);
    let mut acc = vec![0.0; n];
    for r in 0..a.rows {
        acc.iter_mut().for_each(|x| *x = 0.0);
        if bcs == 1 {
            for p in 0..k {
                let av = a.at(r, p);
                if av != 0.0 {
                    let row = &b.data[p * brs..p * brs + n];
                    acc.iter_mut().zip(row).for_each(|(x, bv)| *x += av * bv);
                }
            }
        } else if brs == 1 {
            let arow: Vec<f64> = (0..k).map(|p| a.at(r, p)).collect();
            for (j, x) in acc.iter_mut().enumerate() {
                let col = &b.data[j * bcs..j * bcs + k];
                *x = arow.iter().zip(col).map(|(u, v)| u * v).sum();
            }
        } else {
            for (j, x) in acc.iter_mut().enumerate() {
                *x = (0..k).map(|p| a.at(r, p) * b.at(p, j)).sum();
            }
        }
        let out = &mut c[r * ldc..r * ldc + n];
        if beta == 0.0 {
            out.iter_mut().zip(&acc).for_each(|(o, x)| *o = alpha * x);
        } else {
            out.iter_mut().zip(&acc).for_each(|(o, x)| *o = beta * *o + alpha * x);
        }
    }
}

/// `a * b` into a fresh buffer.
pub fn matmul(a: MatRef<'_>, b: MatRef<'_>) -> Vec<f64> {
    let mut out = vec![0.0; a.rows * b.cols];
    gemm(1.0, a, b, 0.0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn thin_rows_agree_with_packed_kernel() {
        let a: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.11).cos()).collect();
        let am = MatRef::new(&a, 3, 5);
        let full = matmul(am, MatRef::new(&b, 5, 4));
        let full_t = matmul(am, MatRef::new(&b, 4, 5).t());
        for r in 0..3 {
            let row = MatRef::new(&a[r * 5..], 1, 5);
            let thin = matmul(row, MatRef::new(&b, 5, 4));
            let thin_t = matmul(row, MatRef::new(&b, 4, 5).t());
            for j in 0..4 {
                assert!((thin[j] - full[r * 4 + j]).abs() < 1e-14);
                assert!((thin_t[j] - full_t[r * 4 + j]).abs() < 1e-14);
            }
        }
        let mut c = vec![1.0; 4];
        gemm(2.0, MatRef::new(&a, 1, 5), MatRef::new(&b, 5, 4), 0.5, &mut c);
        for j in 0..4 {
            assert!((c[j] - (0.5 + 2.0 * full[j])).abs() < 1e-14);
        }
    }

    #[test]
    fn gemm_with_transposes() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let ab = matmul(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 2));
        assert_eq!(ab, vec![58.0, 64.0, 139.0, 154.0]);
        // a^T a: 3x3
        let ata = matmul(MatRef::new(&a, 2, 3).t(), MatRef::new(&a, 2, 3));
        assert_eq!(ata, vec![17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        let mut c = vec![1.0; 4];
        gemm(2.0, MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 2), 1.0, &mut c);
        assert_eq!(c, vec![117.0, 129.0, 279.0, 309.0]);
    }
}
