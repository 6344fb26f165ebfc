//! Scalar, vector and matrix primitives shared by every other module.
//!
//! Everything is `f64` and natural-log based. Probabilities fed to `log` are
//! clamped below by [`LOG_FLOOR`] wherever a zero could otherwise produce
//! `-inf`.

use crate::error::{GcdError, Result};

/// Floor applied to probabilities before taking a logarithm in
/// cross-entropy and KL divergence.
pub const LOG_FLOOR: f64 = 1e-12;

/// Vectors shorter than this are normalised by `norm + NORM_EPS` instead of
/// `norm`.
pub const NORM_EPS: f64 = 1e-8;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GcdError::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(GcdError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(GcdError::Shape(format!(
                "cannot stack {} columns on {}",
                other.cols, self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Divisor used when normalising `v`, with the small-norm guard applied.
#[inline]
pub fn guarded_norm(v: &[f64]) -> f64 {
    let n = norm(v);
    if n < NORM_EPS {
        n + NORM_EPS
    } else {
        n
    }
}

/// `v / ‖v‖` with the small-norm guard.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = guarded_norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Pulls a gradient with respect to `v / ‖v‖` back to a gradient with
/// respect to `v`.
///
/// For the unguarded branch this is `(g - v̂ (v̂·g)) / ‖v‖`. In the guarded
/// branch the divisor is `‖v‖ + eps` and the radial term picks up the
/// matching factor.
pub fn l2_normalize_backward(v: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n < NORM_EPS {
        let d = n + NORM_EPS;
        if n == 0.0 {
            return grad_out.iter().map(|g| g / d).collect();
        }
        // d/dv [v / (|v| + eps)] = I/d - v vᵀ / (d² |v|)
        let vg = dot(v, grad_out);
        return grad_out
            .iter()
            .zip(v)
            .map(|(g, x)| g / d - x * vg / (d * d * n))
            .collect();
    }
    let vg = dot(v, grad_out) / (n * n);
    grad_out
        .iter()
        .zip(v)
        .map(|(g, x)| (g - x * vg) / n)
        .collect()
}

/// Temperature softmax, computed with max subtraction.
pub fn softmax_temp(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(GcdError::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(GcdError::InvalidParameter("non-finite logit".into()));
    }
    Ok(softmax_unchecked(logits, tau))
}

/// Softmax without argument validation, for inner loops where `tau` has
/// already been checked.
pub fn softmax_unchecked(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| ((v - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Row-wise softmax of `logits / tau`.
pub fn softmax_rows(logits: &Matrix, tau: f64) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        out.row_mut(i)
            .copy_from_slice(&softmax_unchecked(logits.row(i), tau));
    }
    out
}

/// Given `p = softmax(l / tau)` and `g = dL/dp`, returns `dL/dl`.
pub fn softmax_backward(p: &[f64], grad_p: &[f64], tau: f64) -> Vec<f64> {
    let gp = dot(p, grad_p);
    p.iter()
        .zip(grad_p)
        .map(|(pi, gi)| pi * (gi - gp) / tau)
        .collect()
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

/// `-Σ target_k log max(pred_k, 1e-12)`.
pub fn cross_entropy(target: &[f64], pred: &[f64]) -> f64 {
    -target
        .iter()
        .zip(pred)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| t * p.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

/// `KL(p ‖ q)` with `q` clamped below by `1e-12`.
pub fn kl_div(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.ln() - b.max(LOG_FLOOR).ln()))
        .sum()
}

/// Index of the largest entry; the lowest index wins exact ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn max_value(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Validates that `p` is a probability vector within `tol`.
pub fn check_distribution(p: &[f64], tol: f64) -> Result<()> {
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(GcdError::InvalidParameter(
            "distribution has a negative or non-finite entry".into(),
        ));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(GcdError::InvalidParameter(format!(
            "distribution sums to {s}"
        )));
    }
    Ok(())
}

/// A probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_distribution(&probs, 1e-9)?;
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Softmax of `logits / tau`.
    pub fn from_logits(logits: &[f64], tau: f64) -> Result<Self> {
        softmax_temp(logits, tau).map(Self)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.0)
    }

    /// Rescales so entries sum to exactly one (up to rounding).
    pub(crate) fn renormalize(&mut self) {
        let s: f64 = self.0.iter().sum();
        self.0.iter_mut().for_each(|v| *v /= s);
    }

    pub(crate) fn probs_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference_grad<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Relative error used by gradient checks: `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between an analytic and a numeric gradient.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n, floor))
        .fold(0.0, f64::max)
}
