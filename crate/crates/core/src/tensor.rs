//! Dense row-major tensors and the forward kernels the model needs.
//!
//! Tensors are plain containers; recording and differentiation live in
//! [`crate::tape`]. Kernels are written with fixed, deterministic reduction
//! orders so repeated runs are bit-identical.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense numeric array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> TensorBase<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(TensorBase { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        TensorBase {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn scalar(v: T) -> Self {
        TensorBase {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let n = rows.len();
        let d = if n == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            assert_eq!(r.len(), d, "ragged rows");
            data.extend_from_slice(r);
        }
        TensorBase {
            shape: vec![n, d],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> T {
        debug_assert!(self.data.len() == 1);
        self.data[0]
    }

    /// Number of rows / row width for rank-2 tensors.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let d = self.shape[1];
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        let mut m = T::zero();
        for (a, b) in self.data.iter().zip(&other.data) {
            let d = (*a - *b).abs();
            if d > m {
                m = d;
            }
        }
        m
    }

    // ── elementwise ──────────────────────────────────────────────────

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a + *b)
            .collect();
        TensorBase {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "sub shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a - *b)
            .collect();
        TensorBase {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "mul shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a * *b)
            .collect();
        TensorBase {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn scale(&self, c: T) -> Self {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|a| *a * c).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for v in &self.data {
            acc += *v;
        }
        acc
    }

    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "dot shape mismatch");
        let mut acc = T::zero();
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += *a * *b;
        }
        acc
    }

    // ── matrix products (rank 2) ─────────────────────────────────────

    /// `self [n,k] @ other [k,m] -> [n,m]`, ikj loop order.
    pub fn matmul(&self, other: &Self) -> Self {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul inner dim mismatch");
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let a_row = self.row(i);
            let o_row = &mut out[i * m..(i + 1) * m];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = other.row(kk);
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        TensorBase {
            shape: vec![n, m],
            data: out,
        }
    }

    /// `self [n,k] @ other^T [m,k] -> [n,m]` (row-by-row dot products).
    pub fn matmul_bt(&self, other: &Self) -> Self {
        let (n, k) = (self.rows(), self.cols());
        let (m, k2) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul_bt inner dim mismatch");
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let a_row = self.row(i);
            for j in 0..m {
                let b_row = other.row(j);
                let mut acc = T::zero();
                for (a, b) in a_row.iter().zip(b_row) {
                    acc += *a * *b;
                }
                out[i * m + j] = acc;
            }
        }
        TensorBase {
            shape: vec![n, m],
            data: out,
        }
    }

    /// `self^T [n,k] @ other [n,m] -> [k,m]`.
    pub fn matmul_at(&self, other: &Self) -> Self {
        let (n, k) = (self.rows(), self.cols());
        let (n2, m) = (other.rows(), other.cols());
        assert_eq!(n, n2, "matmul_at outer dim mismatch");
        let mut out = vec![T::zero(); k * m];
        for i in 0..n {
            let a_row = self.row(i);
            let b_row = other.row(i);
            for (kk, &a) in a_row.iter().enumerate() {
                let o_row = &mut out[kk * m..(kk + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        TensorBase {
            shape: vec![k, m],
            data: out,
        }
    }
}

// ── nonlinear forward kernels ────────────────────────────────────────

/// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(0.7978845608028654); // sqrt(2/pi)
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (T::one() + u.tanh())
}

/// Derivative of the tanh-approximation GELU.
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(0.7978845608028654);
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Softmax over a slice, numerically stabilized. Writes into `out`.
pub fn softmax_into<T: Scalar>(row: &[T], out: &mut [T]) {
    let mut mx = row[0];
    for v in row {
        if *v > mx {
            mx = *v;
        }
    }
    let mut sum = T::zero();
    for (o, v) in out.iter_mut().zip(row) {
        let e = (*v - mx).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// Row-wise softmax of a rank-2 tensor. With `causal`, row `i` is normalized
/// over columns `0..=i` and later columns are exactly zero.
pub fn softmax_rows<T: Scalar>(x: &TensorBase<T>, causal: bool) -> TensorBase<T> {
    let (n, m) = (x.rows(), x.cols());
    let mut out = TensorBase::zeros(&[n, m]);
    for i in 0..n {
        let w = if causal { (i + 1).min(m) } else { m };
        let row = &x.row(i)[..w];
        let mut buf = vec![T::zero(); w];
        softmax_into(row, &mut buf);
        out.row_mut(i)[..w].copy_from_slice(&buf);
    }
    out
}

/// Per-row mean/variance statistics used by layer normalization.
pub struct LnStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

pub const LN_EPS: f64 = 1e-5;

/// Layer normalization over the last dimension with affine parameters.
/// Returns the output plus the per-row stats needed for the backward pass.
pub fn layernorm<T: Scalar>(
    x: &TensorBase<T>,
    gamma: &[T],
    beta: &[T],
) -> (TensorBase<T>, LnStats<T>) {
    let (n, d) = (x.rows(), x.cols());
    assert_eq!(gamma.len(), d);
    assert_eq!(beta.len(), d);
    let eps = T::from_f64_lossy(LN_EPS);
    let dn = T::from_f64_lossy(d as f64);
    let mut out = TensorBase::zeros(&[n, d]);
    let mut mean = Vec::with_capacity(n);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mut mu = T::zero();
        for v in row {
            mu += *v;
        }
        mu = mu / dn;
        let mut var = T::zero();
        for v in row {
            let c = *v - mu;
            var += c * c;
        }
        var = var / dn;
        let istd = T::one() / (var + eps).sqrt();
        let orow = out.row_mut(i);
        for j in 0..d {
            orow[j] = (row[j] - mu) * istd * gamma[j] + beta[j];
        }
        mean.push(mu);
        inv_std.push(istd);
    }
    (out, LnStats { mean, inv_std })
}

/// Index of the maximum element; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Log-softmax of one entry of a logit vector (stable).
pub fn log_softmax_at<T: Scalar>(row: &[T], idx: usize) -> T {
    let mut mx = row[0];
    for v in row {
        if *v > mx {
            mx = *v;
        }
    }
    let mut sum = T::zero();
    for v in row {
        sum += (*v - mx).exp();
    }
    row[idx] - mx - sum.ln()
}
