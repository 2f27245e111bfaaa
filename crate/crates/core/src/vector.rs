//! Flat-vector helpers for gradient arithmetic.

use crate::error::{Error, Result};
use crate::real::Real;

pub fn check_len<S>(a: &[S], b: &[S]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Length {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm_sq<S: Real>(a: &[S]) -> S {
    dot(a, a)
}

pub fn norm<S: Real>(a: &[S]) -> S {
    norm_sq(a).sqrt()
}

pub fn sub<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// `acc += scale * x`
pub fn axpy<S: Real>(acc: &mut [S], scale: S, x: &[S]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a = *a + scale * v;
    }
}

pub fn scale<S: Real>(a: &[S], s: S) -> Vec<S> {
    a.iter().map(|&v| v * s).collect()
}

pub fn cosine<S: Real>(a: &[S], b: &[S]) -> S {
    let denom = norm(a) * norm(b);
    if denom == S::zero() {
        S::zero()
    } else {
        dot(a, b) / denom
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
