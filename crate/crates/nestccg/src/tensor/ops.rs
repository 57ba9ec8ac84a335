//! Forward operations and their analytic backward passes.
//!
//! Every backward function takes the original inputs plus the gradient
//! flowing into the output and returns gradients with respect to the
//! inputs. The tape in [`crate::tensor::tape`] dispatches to these; they
//! are also directly exercised by the finite-difference tests.

use crate::error::{Error, Result};
use crate::tensor::matrix::Matrix;

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(
        a.cols(),
        b.rows(),
        "matmul: inner dimensions differ ({}x{} * {}x{})",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    );
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(p);
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// d(A·B) w.r.t. A and B given the output gradient.
pub fn matmul_backward(a: &Matrix, b: &Matrix, dout: &Matrix) -> (Matrix, Matrix) {
    let da = matmul(dout, &b.transpose());
    let db = matmul(&a.transpose(), dout);
    (da, db)
}

/// Adds a 1×c bias row to every row of `a`.
pub fn add_bias(a: &Matrix, bias: &Matrix) -> Matrix {
    assert_eq!(bias.rows(), 1, "add_bias: bias must be a row vector");
    assert_eq!(a.cols(), bias.cols(), "add_bias: width mismatch");
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for (v, b) in row.iter_mut().zip(bias.row(0)) {
            *v += b;
        }
    }
    out
}

pub fn add_bias_backward(dout: &Matrix) -> (Matrix, Matrix) {
    let da = dout.clone();
    let mut dbias = Matrix::zeros(1, dout.cols());
    for i in 0..dout.rows() {
        for j in 0..dout.cols() {
            dbias.set(0, j, dbias.get(0, j) + dout.get(i, j));
        }
    }
    (da, dbias)
}

pub fn relu(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward(input: &Matrix, dout: &Matrix) -> Matrix {
    assert_eq!(input.shape(), dout.shape());
    let mut dx = dout.clone();
    for (g, x) in dx.data_mut().iter_mut().zip(input.data()) {
        if *x <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// Layer normalization of a single vector with learnable gain and bias.
/// Uses the biased (divide-by-d) variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len();
    assert!(d >= 1);
    assert_eq!(gain.len(), d);
    assert_eq!(bias.len(), d);
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let denom = (var + eps).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| gain[i] * ((v - mean) / denom) + bias[i])
        .collect()
}

/// Backward pass of [`layer_norm`] for one vector. Returns (dx, dgain, dbias).
pub fn layer_norm_backward(
    x: &[f64],
    gain: &[f64],
    eps: f64,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let denom = (var + eps).sqrt();
    let y: Vec<f64> = x.iter().map(|v| (v - mean) / denom).collect();

    let dgain: Vec<f64> = dout.iter().zip(&y).map(|(g, yi)| g * yi).collect();
    let dbias: Vec<f64> = dout.to_vec();

    let dy: Vec<f64> = dout.iter().zip(gain).map(|(g, gn)| g * gn).collect();
    let mean_dy = dy.iter().sum::<f64>() / d;
    let mean_dy_y = dy.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / d;
    let dx: Vec<f64> = dy
        .iter()
        .zip(&y)
        .map(|(dyi, yi)| (dyi - mean_dy - yi * mean_dy_y) / denom)
        .collect();
    (dx, dgain, dbias)
}

/// Softmax over the entries of `logits` where `mask` is nonzero; masked
/// entries are exactly zero in the output. Max-subtraction over the
/// unmasked entries keeps the exponentials in range.
pub fn masked_softmax(logits: &[f64], mask: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(logits.len(), mask.len());
    let mut max = f64::NEG_INFINITY;
    for (l, m) in logits.iter().zip(mask) {
        if *m != 0.0 && *l > max {
            max = *l;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::Invalid(
            "masked_softmax: mask selects no entries".into(),
        ));
    }
    let mut out = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for (i, (l, m)) in logits.iter().zip(mask).enumerate() {
        if *m != 0.0 {
            let e = (l - max).exp();
            out[i] = e;
            sum += e;
        }
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
    Ok(out)
}

/// Backward pass of [`masked_softmax`] given the forward output `probs`.
pub fn masked_softmax_backward(probs: &[f64], mask: &[f64], dout: &[f64]) -> Vec<f64> {
    let dot: f64 = probs
        .iter()
        .zip(dout)
        .zip(mask)
        .filter(|(_, m)| **m != 0.0)
        .map(|((p, g), _)| p * g)
        .sum();
    probs
        .iter()
        .zip(dout)
        .zip(mask)
        .map(|((p, g), m)| if *m != 0.0 { p * (g - dot) } else { 0.0 })
        .collect()
}

/// Numerically stable log(sum(exp(row))).
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of a softmax over one logit row against a target index.
pub fn cross_entropy_row(logits: &[f64], target: usize) -> f64 {
    assert!(target < logits.len(), "target index out of range");
    log_sum_exp(logits) - logits[target]
}

/// Gradient of [`cross_entropy_row`] w.r.t. the logits: softmax - onehot.
pub fn cross_entropy_row_backward(logits: &[f64], target: usize) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    let mut grad: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
    grad[target] -= 1.0;
    grad
}

/// Softmax over one row (all entries unmasked).
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| (v - lse).exp()).collect()
}
