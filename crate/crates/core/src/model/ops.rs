//! Row-wise kernels shared by the forward and backward passes.

use super::Scalar;
use crate::error::{Error, Result};

/// `y_i = w_i x_i / sqrt(mean(x²) + eps)`. Returns the inverse RMS.
pub fn rmsnorm_into<T: Scalar>(x: &[T], w: &[T], eps: f64, y: &mut [T]) -> T {
    let n = T::lit(x.len() as f64);
    let ms = x.iter().fold(T::zero(), |s, &v| s + v * v) / n;
    let inv = T::one() / (ms + T::lit(eps)).sqrt();
    for ((o, &v), &g) in y.iter_mut().zip(x).zip(w) {
        *o = g * v * inv;
    }
    inv
}

pub fn rmsnorm<T: Scalar>(x: &[T], w: &[T], eps: f64) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    rmsnorm_into(x, w, eps, &mut y);
    y
}

/// Backward of one RMSNorm row. Adds into `dx` and `dw`.
pub fn rmsnorm_backward<T: Scalar>(x: &[T], w: &[T], inv: T, dy: &[T], dx: &mut [T], dw: &mut [T]) {
    let n = T::lit(x.len() as f64);
    let mut dot = T::zero();
    for i in 0..x.len() {
        dw[i] = dw[i] + dy[i] * x[i] * inv;
        dot = dot + dy[i] * w[i] * x[i];
    }
    let c = inv * inv * inv * dot / n;
    for i in 0..x.len() {
        dx[i] = dx[i] + dy[i] * w[i] * inv - x[i] * c;
    }
}

pub fn sigmoid<T: Scalar>(t: T) -> T {
    T::one() / (T::one() + (-t).exp())
}

pub fn silu<T: Scalar>(t: T) -> T {
    t * sigmoid(t)
}

pub fn silu_grad<T: Scalar>(t: T) -> T {
    let s = sigmoid(t);
    s * (T::one() + t * (T::one() - s))
}

/// In-place softmax over `row`; `-inf` entries get probability 0.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Cosines and sines of the rotary angles, `[positions × head_dim/2]`.
#[derive(Clone, Debug)]
pub struct RopeTable<T> {
    half: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> RopeTable<T> {
    pub fn new(head_dim: usize, len: usize, base: f64) -> Result<Self> {
        if !head_dim.is_multiple_of(2) {
            return Err(Error::OddHeadDim(head_dim));
        }
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(len * half);
        let mut sin = Vec::with_capacity(len * half);
        for m in 0..len {
            for i in 0..half {
                let theta = base.powf(-2.0 * i as f64 / head_dim as f64);
                let a = m as f64 * theta;
                cos.push(T::lit(a.cos()));
                sin.push(T::lit(a.sin()));
            }
        }
        Ok(Self { half, cos, sin })
    }

    /// Rotates the interleaved pairs `(2i, 2i+1)` of `v` for position `m`.
    /// `inverse` rotates by the negative angle.
    pub fn rotate(&self, v: &mut [T], m: usize, inverse: bool) {
        let (c, s) = (
            &self.cos[m * self.half..(m + 1) * self.half],
            &self.sin[m * self.half..(m + 1) * self.half],
        );
        for i in 0..self.half {
            let (x0, x1) = (v[2 * i], v[2 * i + 1]);
            let si = if inverse { -s[i] } else { s[i] };
            v[2 * i] = x0 * c[i] - x1 * si;
            v[2 * i + 1] = x0 * si + x1 * c[i];
        }
    }
}

/// Applies rotary embeddings to `x` (`[seq × head_dim]`, row-major), row `r`
/// at position `positions[r]`.
pub fn rope_apply<T: Scalar>(
    x: &[T],
    head_dim: usize,
    positions: &[usize],
    base: f64,
) -> Result<Vec<T>> {
    if !head_dim.is_multiple_of(2) {
        return Err(Error::OddHeadDim(head_dim));
    }
    if x.len() != positions.len() * head_dim {
        return Err(Error::Shape(format!(
            "rope input of {} values for {} positions of width {head_dim}",
            x.len(),
            positions.len()
        )));
    }
    let max = positions.iter().copied().max().map_or(0, |m| m + 1);
    let table = RopeTable::new(head_dim, max, base)?;
    let mut out = x.to_vec();
    for (r, &m) in positions.iter().enumerate() {
        table.rotate(&mut out[r * head_dim..(r + 1) * head_dim], m, false);
    }
    Ok(out)
}
