//! Elementwise and reduction kernels shared by the layers.

use super::Tensor;
use crate::error::{Error, Result};

/// Numerically stable softmax of one vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Softmax along the last axis.
pub fn softmax_last_axis(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let c = t.cols();
    if c > 0 {
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// `-log softmax(logits)[target]` and its gradient `softmax - one_hot`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::TargetOutOfRange { target, classes: logits.len() });
    }
    let logp = log_softmax(logits);
    let grad = logp.iter().enumerate().map(|(i, lp)| lp.exp() - if i == target { 1.0 } else { 0.0 }).collect();
    Ok((-logp[target], grad))
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `y += a * x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y[r, :] += x[r, :] @ w` for row-major `x [rows x din]`, `w [din x dout]`.
pub fn matmul_acc(x: &[f64], din: usize, w: &[f64], dout: usize, y: &mut [f64]) {
    for (xr, yr) in x.chunks_exact(din).zip(y.chunks_exact_mut(dout)) {
        for (i, &a) in xr.iter().enumerate() {
            if a != 0.0 {
                axpy(a, &w[i * dout..(i + 1) * dout], yr);
            }
        }
    }
}
