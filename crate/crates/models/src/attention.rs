//! Multi-head scaled dot-product attention on `[B, L, C]` token batches.

use lgseg_tensor::{Float, Var};

use crate::error::{input_err, Result};

/// `[B, L, m·d] -> [B·m, L, d]`.
pub fn split_heads<'g, T: Float>(x: &Var<'g, T>, heads: usize) -> Result<Var<'g, T>> {
    let s = x.shape();
    if s.len() != 3 || !s[2].is_multiple_of(heads) {
        return Err(input_err(s, format!("cannot split into {heads} heads")));
    }
    let (b, l, c) = (s[0], s[1], s[2]);
    let d = c / heads;
    Ok(x.reshape(&[b, l, heads, d])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b * heads, l, d])?)
}

/// `[B·m, L, d] -> [B, L, m·d]`.
pub fn merge_heads<'g, T: Float>(x: &Var<'g, T>, heads: usize) -> Result<Var<'g, T>> {
    let s = x.shape();
    let (bm, l, d) = (s[0], s[1], s[2]);
    let b = bm / heads;
    Ok(x.reshape(&[b, heads, l, d])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, l, heads * d])?)
}

/// Attention output together with its probability rows.
pub struct Attended<'g, T: Float> {
    pub out: Var<'g, T>,
    pub probs: Var<'g, T>,
}

/// `softmax(q kᵀ / sqrt(d) + bias) v` over per-head batches `[B·m, L, d]`.
/// `bias` receives the raw logits `[B·m, Lq, Lk]` and returns them biased.
pub fn attend<'g, T: Float>(
    q: &Var<'g, T>,
    k: &Var<'g, T>,
    v: &Var<'g, T>,
    bias: impl FnOnce(Var<'g, T>) -> Result<Var<'g, T>>,
) -> Result<Attended<'g, T>> {
    let d = q.shape()[2];
    let logits = q.bmm(k, true)?.mul_scalar(1.0 / (d as f64).sqrt())?;
    let logits = bias(logits)?;
    let probs = logits.softmax(2)?;
    let out = probs.bmm(v, false)?;
    Ok(Attended { out, probs })
}
