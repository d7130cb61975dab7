//! Small dense layers with deterministic summation order.
//!
//! All matrices are stored `in x out`, row-major, and applied as `y = x W + b`.
//! Every output element accumulates its products in ascending input index
//! starting from `0.0`; the bias is added last. Oracles that follow the same
//! order reproduce results bit-for-bit.
//!
//! Initialization: weights are uniform in `[-a, a]` with `a = fan_in^{-1/2}`,
//! drawn in declaration order from the model stream and rounded to `f32`
//! precision so checkpoints (stored as `f32`) round-trip exactly. Biases start
//! at zero and normalization gains at one.

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::rng::DetRng;

/// Visitor over named parameter tensors: `(name, shape, values)`.
pub type ParamVisitor<'a> = dyn FnMut(&str, &[usize], &mut Vec<f64>) + 'a;

/// Anything holding trainable tensors.
pub trait Parameterized {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>);

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, _, v| n += v.len());
        n
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `[-a, a]` with `a = fan_in^{-1/2}`, rounded to `f32` so that
/// checkpoints reproduce the weights exactly. Used for weights and biases.
pub(crate) fn init_uniform(len: usize, fan_in: usize, rng: &mut DetRng) -> Vec<f64> {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..len).map(|_| rng.uniform(-a, a) as f32 as f64).collect()
}

/// Dense `rows x cols` matrix applied as `y_j = sum_i x_i M_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn random(rows: usize, cols: usize, rng: &mut DetRng) -> Self {
        Self {
            rows,
            cols,
            data: init_uniform(rows * cols, rows, rng),
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `out = x M` (length `cols`); `x` has length `rows`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.apply_into(x, &mut out);
        out
    }
}

impl Parameterized for Matrix {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(prefix, &[self.rows, self.cols], &mut self.data);
    }
}

/// Affine layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    pub fn random(input: usize, output: usize, rng: &mut DetRng) -> Self {
        Self {
            weight: Matrix::random(input, output, rng),
            bias: init_uniform(output, input, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        self.weight.apply_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(x, &mut out);
        out
    }
}

impl Parameterized for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.weight.visit_params(&join(prefix, "weight"), f);
        let n = self.bias.len();
        f(&join(prefix, "bias"), &[n], &mut self.bias);
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two-layer perceptron `Linear -> ReLU -> Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub hidden: Linear,
    pub output: Linear,
}

impl Ffn {
    pub fn random(input: usize, hidden: usize, output: usize, rng: &mut DetRng) -> Self {
        Self {
            hidden: Linear::random(input, hidden, rng),
            output: Linear::random(hidden, output, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::zeros(input, hidden),
            output: Linear::zeros(hidden, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.hidden.forward(x);
        h.iter_mut().for_each(|v| *v = relu(*v));
        self.output.forward(&h)
    }
}

impl Parameterized for Ffn {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.hidden.visit_params(&join(prefix, "hidden"), f);
        self.output.visit_params(&join(prefix, "output"), f);
    }
}

/// Per-vector normalization to zero mean and unit variance, then `gamma * x + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            eps: 1e-5,
        }
    }

    pub fn apply(&self, x: &mut [f64]) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + self.eps).sqrt();
        for ((v, g), b) in x.iter_mut().zip(&self.gamma).zip(&self.beta) {
            *v = (*v - mean) * inv * g + b;
        }
    }
}

impl Parameterized for LayerNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        let n = self.gamma.len();
        f(&join(prefix, "gamma"), &[n], &mut self.gamma);
        f(&join(prefix, "beta"), &[n], &mut self.beta);
    }
}

/// 3x3 convolution with zero padding 1.
/// Weight layout `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub input: usize,
    pub output: usize,
    pub stride: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn random(input: usize, output: usize, stride: usize, rng: &mut DetRng) -> Self {
        Self {
            input,
            output,
            stride,
            weight: init_uniform(output * input * 9, input * 9, rng),
            bias: init_uniform(output, input * 9, rng),
        }
    }

    /// Output size along an axis of length `n`: `ceil(n / stride)`.
    pub fn out_len(&self, n: usize) -> usize {
        n.div_ceil(self.stride)
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels() != self.input {
            return Err(Error::config(format!(
                "conv expects {} input channels, got {}",
                self.input,
                x.channels()
            )));
        }
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = (self.out_len(h), self.out_len(w));
        let mut out = FeatureMap::zeros(oh, ow, self.output);
        for r in 0..oh {
            for c in 0..ow {
                let px = out.at_mut(r, c);
                for (o, slot) in px.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        let sr = (r * self.stride + ky) as isize - 1;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sc = (c * self.stride + kx) as isize - 1;
                            if sc < 0 || sc >= w as isize {
                                continue;
                            }
                            let src = x.at(sr as usize, sc as usize);
                            let base = o * self.input * 9 + ky * 3 + kx;
                            for (i, &s) in src.iter().enumerate() {
                                acc += s * self.weight[base + i * 9];
                            }
                        }
                    }
                    *slot = acc + self.bias[o];
                }
            }
        }
        Ok(out)
    }
}

impl Parameterized for Conv3x3 {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(&join(prefix, "weight"), &[self.output, self.input, 3, 3], &mut self.weight);
        let n = self.bias.len();
        f(&join(prefix, "bias"), &[n], &mut self.bias);
    }
}

pub(crate) fn visit_child<P: Parameterized + ?Sized>(p: &mut P, prefix: &str, name: &str, f: &mut ParamVisitor<'_>) {
    p.visit_params(&join(prefix, name), f);
}
