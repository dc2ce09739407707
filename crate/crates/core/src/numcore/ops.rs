//! Differentiable primitives as forward/backward pairs.
//!
//! Losses in this crate are built by chaining these by hand; each backward
//! takes the upstream gradient and returns (or accumulates) the gradient
//! with respect to its inputs.

use crate::numcore::tensor::{dot, matmul_a_bt, matmul_at_b_acc, matmul_into};
use crate::numcore::Tensor;

/// `y[rows×out] = x[rows×in] · w[in×out] + b`.
pub fn dense_forward(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(x.len(), rows * n_in);
    debug_assert_eq!(b.len(), n_out);
    let mut y = vec![0.0; rows * n_out];
    matmul_into(x, w.data(), &mut y, rows, n_in, n_out);
    for r in 0..rows {
        for (v, &bb) in y[r * n_out..(r + 1) * n_out].iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    y
}

/// Accumulates `dw += xᵀ·dy`, `db += Σ_rows dy`; returns `dx = dy·wᵀ` when asked.
pub fn dense_backward(
    x: &[f64],
    rows: usize,
    w: &Tensor,
    dy: &[f64],
    dw: &mut Tensor,
    db: &mut Tensor,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    matmul_at_b_acc(x, dy, dw.data_mut(), rows, n_in, n_out);
    let db = db.data_mut();
    for r in 0..rows {
        for (g, &d) in db.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
            *g += d;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * n_in];
        matmul_a_bt(dy, w.data(), &mut dx, rows, n_out, n_in);
        dx
    })
}

pub fn tanh_forward(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

/// Given `y = tanh(x)` and `dy`, returns `dx`.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(&y, &d)| d * (1.0 - y * y)).collect()
}

/// Result of L2 normalization; `norm == 0` marks the degenerate zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub unit: Vec<f64>,
    pub norm: f64,
}

impl Normalized {
    pub fn is_degenerate(&self) -> bool {
        self.norm == 0.0
    }
}

/// `v / ‖v‖₂`; the zero vector maps to zero.
pub fn l2_normalize(v: &[f64]) -> Normalized {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 {
        return Normalized {
            unit: vec![0.0; v.len()],
            norm: 0.0,
        };
    }
    Normalized {
        unit: v.iter().map(|x| x / norm).collect(),
        norm,
    }
}

/// `dv = (du − u·(u·du)) / ‖v‖`; zero for the degenerate case.
pub fn l2_normalize_backward(n: &Normalized, du: &[f64]) -> Vec<f64> {
    if n.is_degenerate() {
        return vec![0.0; du.len()];
    }
    let proj = dot(&n.unit, du);
    n.unit
        .iter()
        .zip(du)
        .map(|(&u, &d)| (d - u * proj) / n.norm)
        .collect()
}

/// Column means of a `rows×cols` matrix.
pub fn mean_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut m = vec![0.0; cols];
    for r in 0..rows {
        for (acc, &v) in m.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *acc += v;
        }
    }
    let inv = 1.0 / rows as f64;
    m.iter_mut().for_each(|v| *v *= inv);
    m
}

pub fn mean_rows_backward(dm: &[f64], rows: usize) -> Vec<f64> {
    let inv = 1.0 / rows as f64;
    let row: Vec<f64> = dm.iter().map(|d| d * inv).collect();
    row.repeat(rows)
}

/// Max-shifted `log Σ exp(x)`. Empty input gives −∞.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Gradient of [`log_sum_exp`]: the softmax of `x`.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

/// Max-shifted `log Σ w·exp(x)` over entries with positive weight.
/// Returns −∞ if every weight is zero.
pub fn weighted_log_sum_exp(x: &[f64], w: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), w.len());
    let m = x
        .iter()
        .zip(w)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = x
        .iter()
        .zip(w)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, &w)| w * (v - m).exp())
        .sum();
    m + s.ln()
}

/// Gradient of [`weighted_log_sum_exp`] with respect to `x`.
pub fn weighted_softmax(x: &[f64], w: &[f64]) -> Vec<f64> {
    let lse = weighted_log_sum_exp(x, w);
    x.iter()
        .zip(w)
        .map(|(&v, &w)| if w > 0.0 { w * (v - lse).exp() } else { 0.0 })
        .collect()
}
