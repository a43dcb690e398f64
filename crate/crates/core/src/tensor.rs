//! Dense 2-D tensors in row-major order, 64-bit floats throughout.
//!
//! A `Tensor` is an immutable value. When it was produced by a recording
//! [`Tape`](crate::tape::Tape) it additionally carries a node handle so
//! gradients can be looked up after a backward pass; plain constructors
//! leave that handle empty.

use crate::tape::NodeRef;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, left {lhs:?} vs right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: data length {len} does not fill {rows}x{cols}")]
    LengthMismatch {
        op: &'static str,
        len: usize,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("backward root must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("tensor is not recorded on this tape")]
    NotOnTape,
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("{op}: expected a 1x{cols} row vector, got {got:?}")]
    NotARowVector {
        op: &'static str,
        cols: usize,
        got: (usize, usize),
    },
}

#[derive(Clone, Debug)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && *self.data == *other.data
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: Arc::new(vec![0.0; rows * cols]),
            node: None,
        }
    }

    /// Builds a tensor from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::LengthMismatch {
                op: "from_vec",
                len: data.len(),
                rows,
                cols,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Tensor {
            rows,
            cols,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor {
            rows,
            cols,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: Arc::new(vec![v]),
            node: None,
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: data.len(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        Tensor::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
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

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// Scalar payload of a 1x1 tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if !self.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn node(&self) -> Option<NodeRef> {
        self.node
    }

    /// In-place mutable access; any tape handle is dropped because the
    /// stored node no longer matches the value. Shared storage is copied
    /// first (copy-on-write).
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        self.node = None;
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub(crate) fn with_node(mut self, node: NodeRef) -> Self {
        self.node = Some(node);
        self
    }

    /// Copy of the value with any tape handle stripped; storage is shared,
    /// not duplicated.
    pub fn detached(&self) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    // ── value kernels ───────────────────────────────────────────────

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let lhs_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in lhs_row.iter().enumerate() {
                let rhs_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: Arc::new(out),
            node: None,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: Arc::new(out),
            node: None,
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: Arc::new(data),
            node: None,
        })
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&self, mul: f64, add: f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: Arc::new(self.data.iter().map(|&v| mul * v + add).collect()),
            node: None,
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.affine(k, 0.0)
    }

    /// Adds a 1xC bias row to every row.
    pub fn add_bias_row(&self, bias: &Tensor) -> Result<Tensor, TensorError> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(TensorError::NotARowVector {
                op: "add_bias_row",
                cols: self.cols,
                got: bias.shape(),
            });
        }
        let mut out = self.data.as_ref().clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[i * self.cols + j] += bias.data[j];
            }
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: Arc::new(out),
            node: None,
        })
    }

    /// Row-wise softmax of `logits / temperature`, max-shifted so extreme
    /// logits cannot overflow.
    pub fn row_softmax(&self, temperature: f64) -> Result<Tensor, TensorError> {
        if !(temperature > 0.0) {
            return Err(TensorError::NonPositiveTemperature(temperature));
        }
        let inv_t = 1.0 / temperature;
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut max = f64::NEG_INFINITY;
            for &v in row {
                max = max.max(v * inv_t);
            }
            let dst = &mut out[i * self.cols..(i + 1) * self.cols];
            let mut total = 0.0;
            for (o, &v) in dst.iter_mut().zip(row) {
                let e = (v * inv_t - max).exp();
                *o = e;
                total += e;
            }
            let inv_total = 1.0 / total;
            for o in dst.iter_mut() {
                *o *= inv_total;
            }
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: Arc::new(out),
            node: None,
        })
    }

    /// GELU with the tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&self) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: Arc::new(self.data.iter().map(|&x| gelu_scalar(x)).collect()),
            node: None,
        }
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm_rows(
        &self,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor, TensorError> {
        for (name, t) in [("gain", gain), ("bias", bias)] {
            if t.rows != 1 || t.cols != self.cols {
                let _ = name;
                return Err(TensorError::NotARowVector {
                    op: "layer_norm_rows",
                    cols: self.cols,
                    got: t.shape(),
                });
            }
        }
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let (mean, var) = row_mean_var(row);
            let inv_std = 1.0 / (var + eps).sqrt();
            let dst = &mut out[i * self.cols..(i + 1) * self.cols];
            for j in 0..self.cols {
                let normed = (row[j] - mean) * inv_std;
                dst[j] = normed * gain.data[j] + bias.data[j];
            }
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: Arc::new(out),
            node: None,
        })
    }

    /// Selects rows of this tensor by index.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor, TensorError> {
        let mut data = Vec::with_capacity(ids.len() * self.cols);
        for &id in ids {
            if id >= self.rows {
                return Err(TensorError::RowOutOfRange {
                    index: id,
                    rows: self.rows,
                });
            }
            data.extend_from_slice(self.row(id));
        }
        Ok(Tensor {
            rows: ids.len(),
            cols: self.cols,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Matrix-vector product `W v` for a column vector given as a slice.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, TensorError> {
        if v.len() != self.cols {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                lhs: self.shape(),
                rhs: (v.len(), 1),
            });
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .sum::<f64>()
            })
            .collect())
    }

    /// Matrix-vector product with the transpose, `W^T v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>, TensorError> {
        if v.len() != self.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matvec_t",
                lhs: (self.cols, self.rows),
                rhs: (v.len(), 1),
            });
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            for j in 0..self.cols {
                out[j] += row[j] * v[i];
            }
        }
        Ok(out)
    }
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = c * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

pub(crate) fn row_mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let a = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let i = Tensor::identity(2);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn zeros_annihilate() {
        let z = Tensor::zeros(2, 3);
        let ones = Tensor::from_fn(3, 2, |_, _| 1.0);
        assert_eq!(z.matmul(&ones).unwrap(), Tensor::zeros(2, 2));
    }

    #[test]
    fn matmul_shape_mismatch_is_reported() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn from_vec_rejects_nan() {
        let err = Tensor::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }

    #[test]
    fn softmax_symmetric_row() {
        let t = Tensor::from_vec(1, 4, vec![0.0; 4]).unwrap();
        let s = t.row_softmax(1.0).unwrap();
        for &v in s.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        let t = Tensor::zeros(1, 3);
        assert!(t.row_softmax(0.0).is_err());
        assert!(t.row_softmax(-1.0).is_err());
    }

    #[test]
    fn softmax_handles_extreme_logits() {
        let t = Tensor::from_vec(1, 3, vec![50.0, -50.0, 50.0]).unwrap();
        let s = t.row_softmax(1.0).unwrap();
        let sum: f64 = s.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(s.is_finite());
    }

    #[test]
    fn layer_norm_reduces_to_bias_on_constant_rows() {
        let x = Tensor::from_fn(2, 4, |_, _| 3.5);
        let gain = Tensor::row_vector(vec![1.0; 4]);
        let bias = Tensor::row_vector(vec![0.25; 4]);
        let out = x.layer_norm_rows(&gain, &bias, 1e-5).unwrap();
        for &v in out.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_agrees_with_matmul() {
        let w = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = vec![1.0, -1.0, 2.0];
        let got = w.matvec(&v).unwrap();
        assert_eq!(got, vec![5.0, 11.0]);
        let wt = w.matvec_t(&[1.0, 1.0]).unwrap();
        assert_eq!(wt, vec![5.0, 7.0, 9.0]);
    }
}
