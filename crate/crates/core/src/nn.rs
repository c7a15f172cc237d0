//! Layer building blocks: activations, fully connected layers, dropout,
//! and softmax. Each layer exposes a forward that returns whatever its
//! backward needs; there is no general-purpose tape.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{dot, matvec_acc, matvec_t_acc, outer_acc, Parameter, Tensor};
use serde::{Deserialize, Serialize};

/// Execution mode: dropout is active only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Silu,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of silu expressed in terms of the pre-activation.
pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Silu => silu(x),
        }
    }

    /// Derivative given the pre-activation input.
    pub fn prime(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => silu_prime(x),
        }
    }

    pub fn apply_tensor(self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }
}

/// Inverted dropout. In train mode each element survives with probability
/// `1 - p` and is scaled by `1/(1 - p)`; eval mode is the identity. The
/// returned mask holds the applied scale per element and feeds backward.
pub fn dropout(x: &Tensor, p: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0, 1), got {p}"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let mut mask = Tensor::zeros(x.shape());
    for m in mask.data_mut() {
        *m = if rng.bernoulli(keep) { scale } else { 0.0 };
    }
    let out = x.hadamard(&mask)?;
    Ok((out, Some(mask)))
}

/// Numerically stable softmax over a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Backward of softmax: given outputs `y` and upstream `dy`,
/// `dx_i = y_i (dy_i - sum_j y_j dy_j)`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner = dot(y, dy);
    y.iter()
        .zip(dy.iter())
        .map(|(&yi, &dyi)| yi * (dyi - inner))
        .collect()
}

/// Fully connected layer `y = x W + b` with `W` stored `[in x out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Parameter::uniform_fan_in(&[input, output], input, rng),
            bias: Parameter::zeros(&[output]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn output_size(&self) -> usize {
        self.weight.value.dim(1)
    }

    /// Forward over a batch of rows: `x` is `[rows x in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (input, output) = (self.input_size(), self.output_size());
        if x.rank() != 2 || x.dim(1) != input {
            return Err(Error::Shape {
                op: "linear_forward",
                detail: format!("input {:?} does not match weight [{input} x {output}]", x.shape()),
            });
        }
        let mut y = x.matmul(&self.weight.value)?;
        let b = self.bias.value.data();
        for r in 0..y.dim(0) {
            for (yv, bv) in y.row_mut(r).iter_mut().zip(b.iter()) {
                *yv += bv;
            }
        }
        Ok(y)
    }

    /// Single-row forward without the batch wrapper.
    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.value.data().to_vec();
        matvec_acc(&mut y, x, self.weight.value.data());
        y
    }

    /// Backward for a batch: accumulates dW and db, returns the input grad.
    /// `x` must be the tensor passed to the matching forward.
    pub fn backward(&mut self, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        let (input, output) = (self.input_size(), self.output_size());
        if upstream.rank() != 2 || upstream.dim(1) != output || upstream.dim(0) != x.dim(0) {
            return Err(Error::Shape {
                op: "linear_backward",
                detail: format!(
                    "upstream {:?} does not match input {:?} and weight [{input} x {output}]",
                    upstream.shape(),
                    x.shape()
                ),
            });
        }
        let rows = x.dim(0);
        let dw = self.weight.grad.data_mut();
        let db = self.bias.grad.data_mut();
        let mut dx = Tensor::zeros(&[rows, input]);
        for r in 0..rows {
            let xr = x.row(r);
            let g = upstream.row(r);
            outer_acc(dw, xr, g);
            for (dbv, gv) in db.iter_mut().zip(g.iter()) {
                *dbv += gv;
            }
            matvec_t_acc(dx.row_mut(r), self.weight.value.data(), g);
        }
        Ok(dx)
    }

    /// Single-row backward.
    pub fn backward_vec(&mut self, x: &[f64], upstream: &[f64]) -> Vec<f64> {
        outer_acc(self.weight.grad.data_mut(), x, upstream);
        for (dbv, gv) in self.bias.grad.data_mut().iter_mut().zip(upstream.iter()) {
            *dbv += gv;
        }
        let mut dx = vec![0.0; self.input_size()];
        matvec_t_acc(&mut dx, self.weight.value.data(), upstream);
        dx
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}
