//! Dense row-major f64 tensors and the small kernel set the model needs.
//!
//! All compute runs in 64-bit floats; 32-bit storage exists only in the
//! checkpoint format. The default execution path is single-threaded and
//! deterministic. With the `parallel` feature, `matmul` splits output rows
//! across threads; each element is still produced by the same sequential
//! inner loop, so results are bitwise identical to the serial path.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum element count before the parallel matmul path engages.
#[cfg(feature = "parallel")]
const PAR_MIN_ELEMS: usize = 16_384;

/// Dense tensor: shape plus contiguous row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "Tensor::new",
                detail: format!(
                    "shape {:?} implies {} elements, got {}",
                    shape,
                    expected,
                    data.len()
                ),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Identity matrix of extent `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Shape {
                    op: "Tensor::from_rows",
                    detail: format!("ragged rows: expected {}, got {}", c, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent along dimension `d`.
    pub fn dim(&self, d: usize) -> usize {
        self.shape[d]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Column `c` of a rank-2 tensor, copied out.
    pub fn col(&self, c: usize) -> Vec<f64> {
        let (rows, cols) = (self.shape[0], self.shape[1]);
        (0..rows).map(|r| self.data[r * cols + c]).collect()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Tensor {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "add_assign",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                detail: format!("need rank 2, got {:?}", self.shape),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("need rank 2, got {:?} and {:?}", self.shape, other.shape),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("inner extents differ: {:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = Tensor::zeros(&[m, n]);

        #[cfg(feature = "parallel")]
        if m * n >= PAR_MIN_ELEMS {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, out_row)| {
                    matmul_row(&self.data[i * k..(i + 1) * k], &other.data, out_row);
                });
            return Ok(out);
        }

        for i in 0..m {
            matmul_row(
                &self.data[i * k..(i + 1) * k],
                &other.data,
                &mut out.data[i * n..(i + 1) * n],
            );
        }
        Ok(out)
    }

    /// Uniform draws in `[-bound, bound)`.
    pub fn rand_uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
        let mut t = Tensor::zeros(shape);
        rng.fill_uniform(&mut t.data, -bound, bound);
        t
    }
}

/// out_row += x . B for one output row (x has length k, B is k x n row-major).
#[inline]
fn matmul_row(x: &[f64], b: &[f64], out_row: &mut [f64]) {
    let n = out_row.len();
    for (l, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let brow = &b[l * n..(l + 1) * n];
        for j in 0..n {
            out_row[j] += xv * brow[j];
        }
    }
}

/// Dot product with four-way accumulation to break the dependence chain.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let o = i * 4;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// y += a * x.
#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

/// y += x . W for W row-major [in x out].
#[inline]
pub(crate) fn matvec_acc(y: &mut [f64], x: &[f64], w: &[f64]) {
    let out = y.len();
    debug_assert_eq!(x.len() * out, w.len());
    for (i, &xv) in x.iter().enumerate() {
        axpy(y, xv, &w[i * out..(i + 1) * out]);
    }
}

/// dx += W . g for W row-major [in x out]: dx[i] += dot(W[i,:], g).
#[inline]
pub(crate) fn matvec_t_acc(dx: &mut [f64], w: &[f64], g: &[f64]) {
    let out = g.len();
    debug_assert_eq!(dx.len() * out, w.len());
    for (i, dxi) in dx.iter_mut().enumerate() {
        *dxi += dot(&w[i * out..(i + 1) * out], g);
    }
}

/// dW += x outer g for dW row-major [in x out].
#[inline]
pub(crate) fn outer_acc(dw: &mut [f64], x: &[f64], g: &[f64]) {
    let out = g.len();
    debug_assert_eq!(x.len() * out, dw.len());
    for (i, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            axpy(&mut dw[i * out..(i + 1) * out], xv, g);
        }
    }
}

/// A learnable tensor paired with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    /// Uniform init in +-1/sqrt(fan_in), the convention for every weight
    /// matrix in the model; biases stay zero.
    pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self::new(Tensor::rand_uniform(shape, bound, rng))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
