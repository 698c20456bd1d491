//! Forward kernels for the transformer primitives. The tape reuses these and
//! adds the adjoints; they are also usable directly on plain tensors.

use crate::error::{Error, Result};
use crate::tensor::{check_matrix, Tensor};

/// Norms below this are clamped before dividing in cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

pub const LAYER_NORM_EPS: f64 = 1e-5;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax of a matrix along `axis` (0 = down columns, 1 = across rows).
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    check_matrix("softmax", t)?;
    match axis {
        1 => {
            let mut out = t.clone();
            let c = out.cols();
            for row in out.data_mut().chunks_mut(c) {
                softmax_in_place(row);
            }
            Ok(out)
        }
        0 => Ok(softmax(&t.transpose(), 1)?.transpose()),
        _ => Err(Error::dim("softmax", format!("axis {axis} on a matrix"))),
    }
}

/// Normalized rows plus the per-row inverse standard deviation, needed by the
/// backward pass.
pub(crate) fn normalize_rows(x: &[f64], cols: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for (o, v) in xhat[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    (xhat, inv_std)
}

/// Row-wise layer normalization with affine `gain` and `bias` (length = cols).
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = x.cols();
    if gain.len() != c || bias.len() != c {
        return Err(Error::dim(
            "layer_norm",
            format!("{c} columns vs gain {} / bias {}", gain.len(), bias.len()),
        ));
    }
    let (mut y, _) = normalize_rows(x.data(), c, LAYER_NORM_EPS);
    for row in y.chunks_mut(c) {
        for ((v, g), b) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
            *v = *v * g + b;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), y))
}

/// Exact (erf-based) GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn gelu(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::from_parts(t.shape().to_vec(), data)
}

/// Gathers `table` rows for each id into an `ids.len() x cols` matrix.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (vocab, cols) = check_matrix("embedding_lookup", table)?;
    let mut out = Vec::with_capacity(ids.len() * cols);
    for &id in ids {
        if id >= vocab {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: vocab,
            });
        }
        out.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), cols], out))
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of two equal-length vectors. Each norm is clamped to at
/// least [`COSINE_EPS`], so zero vectors give 0 instead of NaN.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim(
            "cosine_similarity",
            format!("{} vs {}", u.len(), v.len()),
        ));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let denom = l2_norm(u).max(COSINE_EPS) * l2_norm(v).max(COSINE_EPS);
    Ok((dot / denom).clamp(-1.0, 1.0))
}
