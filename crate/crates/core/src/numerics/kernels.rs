//! Slice-level compute kernels shared by the tape and the incremental decoder.
//!
//! Every kernel processes rows independently with a fixed accumulation order,
//! so computing one row alone yields bit-identical results to computing it as
//! part of a larger batch.

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Dot product with four partial sums.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// out[m x n] = a[m x k] * b[k x n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

/// out[m x n] = a[m x k] * b[n x k]^T
pub fn matmul_t(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// out[k x n] += a[m x k]^T * b[m x n]
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for r in 0..m {
        let brow = &b[r * n..(r + 1) * n];
        for p in 0..k {
            let av = a[r * k + p];
            if av != 0.0 {
                axpy(av, brow, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
}

#[inline]
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// log(1 + e^x) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place max-subtracted softmax; `-inf` entries become exactly 0.
/// Returns false when every entry is `-inf`.
pub fn softmax_in_place(row: &mut [f64]) -> bool {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY { 0.0 } else { (*v - max).exp() };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    true
}

/// Log-softmax of a logit row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Row-wise layer normalisation. Writes the output and the per-row mean and
/// reciprocal standard deviation.
pub fn layer_norm_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for (((o, xv), g), b) in out.iter_mut().zip(x).zip(gain).zip(bias) {
        *o = (xv - mean) * rstd * g + b;
    }
    (mean, rstd)
}

/// Single-head masked attention for one query row.
///
/// `keys` and `values` are row-major with row stride `stride`; the head owns
/// columns `col0..col0 + q.len()`. Only rows with `visible[j]` take part, in
/// ascending order. Probabilities are written into `probs` (0 where blocked)
/// and the weighted value sum into `out`.
#[allow(clippy::too_many_arguments)]
pub fn attention_row(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    stride: usize,
    col0: usize,
    visible: &[bool],
    scale: f64,
    probs: &mut [f64],
    out: &mut [f64],
) {
    let dh = q.len();
    let mut max = f64::NEG_INFINITY;
    for (j, &vis) in visible.iter().enumerate() {
        if vis {
            let s = dot(q, &keys[j * stride + col0..j * stride + col0 + dh]) * scale;
            probs[j] = s;
            if s > max {
                max = s;
            }
        } else {
            probs[j] = 0.0;
        }
    }
    let mut sum = 0.0;
    for (j, &vis) in visible.iter().enumerate() {
        if vis {
            probs[j] = (probs[j] - max).exp();
            sum += probs[j];
        }
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, &vis) in visible.iter().enumerate() {
        if vis {
            probs[j] /= sum;
            axpy(probs[j], &values[j * stride + col0..j * stride + col0 + dh], out);
        }
    }
}
