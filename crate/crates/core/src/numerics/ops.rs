use crate::error::{ApnetError, Result};

use super::matrix::{dot, l2_norm, DenseMatrix};

pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| v.max(0.0))
}

/// Logistic function, evaluated on the side that cannot overflow `exp`.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &DenseMatrix) -> DenseMatrix {
    x.map(sigmoid_scalar)
}

/// Softmax of `gamma * scores`, stabilized by subtracting the maximum.
pub fn softmax_t(scores: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(ApnetError::EmptyInput("softmax_t"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ApnetError::NonFinite("softmax_t scores".into()));
    }
    Ok(softmax_t_unchecked(scores, gamma))
}

pub(crate) fn softmax_t_unchecked(scores: &[f64], gamma: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (gamma * (s - max)).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Cosine similarity; a zero-norm argument yields 0.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
