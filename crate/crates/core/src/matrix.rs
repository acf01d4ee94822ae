//! Dense row-major matrices and the few vector kernels the solvers need.

use rayon::prelude::*;

use crate::error::{CstError, Result};

/// Rows handled per task in reductions over rows. Fixed so that partial
/// sums, and therefore results, do not depend on the thread count.
const ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CstError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CstError::ShapeMismatch("rows of unequal length".into()));
        }
        Ok(DenseMatrix { rows: rows.len(), cols, data: rows.concat() })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec: length mismatch");
        self.data.par_chunks(self.cols.max(1)).map(|row| dot(row, x)).collect()
    }

    /// `A^T y`, summed over fixed row chunks in a fixed order.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "matvec_t: length mismatch");
        let cols = self.cols;
        let partials: Vec<Vec<f64>> = (0..self.rows.div_ceil(ROW_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; cols];
                for r in c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(self.rows) {
                    axpy(y[r], self.row(r), &mut acc);
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; cols];
        for p in &partials {
            axpy(1.0, p, &mut out);
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    /// Spectral norm by power iteration on `A^T A` from a fixed start.
    pub fn spectral_norm(&self, iterations: usize) -> f64 {
        if self.cols == 0 || self.rows == 0 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..self.cols).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let nv = norm(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let w = self.matvec_t(&self.matvec(&v));
            let next = dot(&v, &w);
            v = w;
            if (next - lambda).abs() <= 1e-12 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.max(0.0).sqrt()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators: vectorizes and keeps a fixed summation order
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
