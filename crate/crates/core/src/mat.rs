//! Dense row-major matrices of `f64`.
//!
//! Everything in the engine — adjacency weights, feature blocks, model
//! parameters, autodiff values — is stored in this one small type. All
//! arithmetic is `f64`; the workloads are small enough that memory is not
//! a concern and count likelihoods are evaluated in their numerically
//! ugly corners, where the extra mantissa bits matter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Matrix products with at least this many multiply-adds go through the
/// row-parallel path. Small products are cheaper sequentially.
const PAR_MATMUL_FLOPS: usize = 16_384;

/// A dense `rows x cols` matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Matrix filled with one value.
    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from a row-major buffer. The buffer length must be `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                left: format!("{rows}x{cols}"),
                right: format!("buffer of {}", data.len()),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    /// Build from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: format!("row 0 of {c}"),
                    right: format!("row {i} of {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Shape as a `(rows, cols)` pair.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Shape formatted for error messages, e.g. `"3x4"`.
    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Elementwise map into a new matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Transposed copy.
    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// Matrix product `self * rhs`.
    ///
    /// Output rows are independent, so the parallel build distributes them
    /// across threads once the product is big enough to amortize the fork;
    /// each row is computed with the same sequential inner loop either way,
    /// so the result is bitwise identical in both modes.
    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape_str(),
                right: rhs.shape_str(),
            });
        }
        let (m, inner, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Mat::zeros(m, n);
        if n == 0 || m == 0 {
            return Ok(out);
        }
        let run_row = |i: usize, row_out: &mut [f64]| {
            let a_row = &self.data[i * inner..(i + 1) * inner];
            for (k, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in row_out.iter_mut().zip(b_row) {
                    *o += aik * b;
                }
            }
        };
        if m * inner * n >= PAR_MATMUL_FLOPS {
            par::for_each_chunk_mut(&mut out.data, n, run_row);
        } else {
            for i in 0..m {
                run_row(i, &mut out.data[i * n..(i + 1) * n]);
            }
        }
        Ok(out)
    }

    /// Frobenius-style elementwise sum.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_known_product() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Mat::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert_abs_diff_eq!(c.get(0, 0), 3.0);
        assert_abs_diff_eq!(c.get(1, 0), 7.0);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "got: {msg}");
    }

    #[test]
    fn matmul_parallel_matches_sequential_bitwise() {
        // Big enough to cross the parallel threshold.
        let n = 40;
        let a = Mat::from_vec(
            n,
            n,
            (0..n * n).map(|i| ((i * 31 % 97) as f64 - 48.0) / 7.0).collect(),
        )
        .unwrap();
        let b = Mat::from_vec(
            n,
            n,
            (0..n * n).map(|i| ((i * 17 % 89) as f64 - 44.0) / 11.0).collect(),
        )
        .unwrap();
        crate::par::set_parallelism(true);
        let par = a.matmul(&b).unwrap();
        crate::par::set_parallelism(false);
        let seq = a.matmul(&b).unwrap();
        crate::par::set_parallelism(true);
        assert_eq!(par.as_slice(), seq.as_slice());
    }

    #[test]
    fn transpose_round_trip() {
        let a = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let t = a.transpose();
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(t.get(0, 1), 4.0);
        assert_eq!(a, t.transpose());
    }

    #[test]
    fn identity_is_neutral() {
        let a = Mat::from_rows(&[vec![2.0, -1.0], vec![0.5, 3.0]]).unwrap();
        let i = Mat::eye(2);
        assert_eq!(a.matmul(&i).unwrap(), a);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }
}
