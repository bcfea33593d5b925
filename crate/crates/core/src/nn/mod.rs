//! Dense reverse-mode differentiation over row-major `f64` matrices.
//!
//! Vectors are `1 × n` rows. Forward kernels are shared between the tape and
//! the tape-free inference paths so both produce identical bits.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{finite_diff_check, GradReport};
pub use params::{Adam, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{CustomOp, GcnGraph, Grads, Tape, Var};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("loss must be 1x1, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::Shape { op: "tensor", left: (rows, cols), right: (data.len(), 1) });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self { rows: 1, cols: values.len(), data: values }
    }

    pub fn scalar(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NnError::Shape { op: "from_rows", left: (rows.len(), cols), right: (1, r.len()) });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    /// Glorot-uniform draw in ±sqrt(6 / (rows + cols)).
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = libm::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect();
        Self { rows, cols, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// The single entry of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() needs a 1x1 tensor");
        self.data[0]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor { rows: self.rows, cols: self.cols, data }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::Shape { op, left: a.shape(), right: b.shape() });
    }
    Ok(())
}

/// Forward kernels.
pub mod kernels {
    use super::*;

    pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        if a.cols != b.rows {
            return Err(NnError::Shape { op: "matmul", left: a.shape(), right: b.shape() });
        }
        let mut out = Tensor::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for k in 0..a.cols {
                let x = a.data[i * a.cols + k];
                if x == 0.0 {
                    continue;
                }
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        Ok(out)
    }

    /// `a · bᵀ`
    pub fn matmul_t(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        if a.cols != b.cols {
            return Err(NnError::Shape { op: "matmul_t", left: a.shape(), right: b.shape() });
        }
        let mut out = Tensor::zeros(a.rows, b.rows);
        for i in 0..a.rows {
            for j in 0..b.rows {
                out.data[i * b.rows + j] = dot(a.row(i), b.row(j));
            }
        }
        Ok(out)
    }

    /// `aᵀ · b`
    pub fn t_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        if a.rows != b.rows {
            return Err(NnError::Shape { op: "t_matmul", left: a.shape(), right: b.shape() });
        }
        let mut out = Tensor::zeros(a.cols, b.cols);
        for r in 0..a.rows {
            for i in 0..a.cols {
                let x = a.data[r * a.cols + i];
                if x == 0.0 {
                    continue;
                }
                for j in 0..b.cols {
                    out.data[i * b.cols + j] += x * b.data[r * b.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(a: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(a.cols, a.rows);
        for i in 0..a.rows {
            for j in 0..a.cols {
                out.data[j * a.rows + i] = a.data[i * a.cols + j];
            }
        }
        out
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor, NnError> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(NnError::Shape { op: "add_row", left: a.shape(), right: row.shape() });
        }
        let mut out = a.clone();
        for r in 0..a.rows {
            for c in 0..a.cols {
                out.data[r * a.cols + c] += row.data[c];
            }
        }
        Ok(out)
    }

    pub fn relu(a: &Tensor) -> Tensor {
        a.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(a: &Tensor) -> Tensor {
        a.map(sigmoid_scalar)
    }

    pub fn sigmoid_scalar(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + libm::exp(-x))
        } else {
            let e = libm::exp(x);
            e / (1.0 + e)
        }
    }

    pub fn log_softmax_rows(a: &Tensor) -> Tensor {
        let mut out = a.clone();
        for r in 0..a.rows {
            let row = &mut out.data[r * a.cols..(r + 1) * a.cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        out
    }

    pub fn softmax_rows(a: &Tensor) -> Tensor {
        let mut out = a.clone();
        for r in 0..a.rows {
            let row = &mut out.data[r * a.cols..(r + 1) * a.cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = libm::exp(*x - max);
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        out
    }

    pub fn mean_rows(a: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(1, a.cols);
        for r in 0..a.rows {
            for c in 0..a.cols {
                out.data[c] += a.data[r * a.cols + c];
            }
        }
        let n = a.rows.max(1) as f64;
        for x in &mut out.data {
            *x /= n;
        }
        out
    }

    pub fn gcn_propagate(graph: &GcnGraph, x: &Tensor, gates: Option<&Tensor>) -> Result<Tensor, NnError> {
        graph.forward(x, gates)
    }
}
