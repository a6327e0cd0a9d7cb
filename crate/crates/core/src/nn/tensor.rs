use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::rng::Rng;

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(input_err!("shape {:?} needs {} values, got {}", shape, n, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(input_err!("tensor values must be finite"));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Uniform draw in `[-scale, scale]`.
    pub fn uniform(shape: &[usize], scale: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `p <- p - lr * g`.
    pub fn sgd_step(&mut self, grad: &Tensor, lr: f64) {
        debug_assert_eq!(self.shape, grad.shape);
        for (p, g) in self.data.iter_mut().zip(&grad.data) {
            *p -= lr * g;
        }
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// `out[m x n] = a[m x k] * b[k x n]`, overwriting `out`.
pub(crate) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `x[m x n] * w[n x p] + bias[p]`.
pub(crate) fn linear(x: &[f64], w: &[f64], bias: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    matmul(x, w, &mut out, m, n, p);
    for row in out.chunks_exact_mut(p) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

/// Backward of [`linear`]: returns `dx = dy * w^T` and, when given,
/// accumulates `dw += x^T * dy` and `db += colsum(dy)`.
pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    m: usize,
    n: usize,
    p: usize,
    param_grads: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    if let Some((dw, db)) = param_grads {
        for i in 0..m {
            let dyrow = &dy[i * p..(i + 1) * p];
            for (j, &xv) in x[i * n..(i + 1) * n].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (g, &d) in dw[j * p..(j + 1) * p].iter_mut().zip(dyrow) {
                    *g += xv * d;
                }
            }
            for (g, &d) in db.iter_mut().zip(dyrow) {
                *g += d;
            }
        }
    }
    let mut dx = vec![0.0; m * n];
    for i in 0..m {
        let dyrow = &dy[i * p..(i + 1) * p];
        for (j, out) in dx[i * n..(i + 1) * n].iter_mut().enumerate() {
            *out = dot(&w[j * p..(j + 1) * p], dyrow);
        }
    }
    dx
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
