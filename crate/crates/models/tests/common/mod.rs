#![allow(dead_code)]

use lgseg_tensor::{Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// Row-wise layer norm over the trailing `c` values.
pub fn layer_norm(x: &[f64], c: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        out.extend(
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) * inv * gamma[i] + beta[i]),
        );
    }
    out
}

/// `x[rows, cin] · w[cin, cout] + b`.
pub fn linear(x: &[f64], cin: usize, w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let cout = w.len() / cin;
    let mut out = Vec::with_capacity(x.len() / cin * cout);
    for row in x.chunks_exact(cin) {
        for j in 0..cout {
            let mut acc = b.map_or(0.0, |b| b[j]);
            for (i, v) in row.iter().enumerate() {
                acc += v * w[i * cout + j];
            }
            out.push(acc);
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Depth-wise `k × k` conv with padding `k / 2` on one `[h, w, c]` image; kernel `[k, k, 1, c]`.
pub fn depthwise(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    kernel: &[f64],
    k: usize,
    stride: usize,
    bias: Option<&[f64]>,
) -> (Vec<f64>, usize, usize) {
    let pad = (k / 2) as isize;
    let oh = (h + 2 * (k / 2) - k) / stride + 1;
    let ow = (w + 2 * (k / 2) - k) / stride + 1;
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut acc = bias.map_or(0.0, |b| b[ch]);
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad;
                        let ix = (ox * stride + kx) as isize - pad;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += x[((iy as usize) * w + ix as usize) * c + ch] * kernel[(ky * k + kx) * c + ch];
                        }
                    }
                }
                out[(oy * ow + ox) * c + ch] = acc;
            }
        }
    }
    (out, oh, ow)
}
