//! Dense row-major matrices and the handful of kernels the encoders share.
//!
//! Linear maps follow the `y = W x + b` convention with `W` stored as
//! `out × in`, so a batch of row vectors `X` maps to `X Wᵀ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix data", rows * cols, data.len()));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::shape("matrix row", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// First `n` rows as a new matrix.
    pub fn top_rows(&self, n: usize) -> Mat {
        let n = n.min(self.rows);
        Mat {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    /// Copies `self` into the top rows of a zero matrix with `rows` rows,
    /// truncating when `rows` is smaller.
    pub fn resized_rows(&self, rows: usize) -> Mat {
        let mut out = Mat::zeros(rows, self.cols);
        let n = rows.min(self.rows) * self.cols;
        out.data[..n].copy_from_slice(&self.data[..n]);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
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
        out
    }

    /// `selfᵀ · other`, accumulated into `acc`.
    pub fn t_matmul_acc(&self, other: &Mat, acc: &mut [f64]) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(acc.len(), self.cols * other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let acc_row = &mut acc[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in acc_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// A `T × D` sequence of per-token vectors plus the number of leading valid
/// positions. Rows at or beyond `valid_length` are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSequence {
    pub values: Mat,
    pub valid_length: usize,
}

impl EmbeddedSequence {
    pub fn new(values: Mat, valid_length: usize) -> Result<Self> {
        if valid_length > values.rows() {
            return Err(Error::shape("valid length", values.rows(), valid_length));
        }
        Ok(EmbeddedSequence {
            values,
            valid_length,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Appends `extra` zero rows while keeping `valid_length`.
    pub fn padded(&self, extra: usize) -> Self {
        EmbeddedSequence {
            values: self.values.resized_rows(self.len() + extra),
            valid_length: self.valid_length,
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W x` for `W` stored `out.len() × x.len()`.
#[inline]
pub fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// `dx += Wᵀ dy` for `W` stored `dy.len() × dx.len()`.
#[inline]
pub fn matvec_t_acc(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    debug_assert_eq!(w.len(), dy.len() * cols);
    for (i, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (d, &wv) in dx.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *d += g * wv;
        }
    }
}

/// `dW += dy xᵀ`
#[inline]
pub fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(dw.len(), dy.len() * cols);
    for (i, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (d, &xv) in dw[i * cols..(i + 1) * cols].iter_mut().zip(x) {
            *d += g * xv;
        }
    }
}

#[inline]
pub fn add_acc(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| exp(x - max)).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Gradient of a softmax output with respect to its logits, applied to an
/// upstream gradient: `ds_k = p_k (dp_k − Σ_l p_l dp_l)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(&pk, &g)| pk * (g - inner)).collect()
}
