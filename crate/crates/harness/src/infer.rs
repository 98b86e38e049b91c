use lgseg_models::SegModel;
use lgseg_tensor::{Float, Graph, GraphOptions, ParamStore, Tensor};

use crate::error::{invalid, Result};

/// Eval-mode main-head logits `[N, H, W, K]` for normalized images `[N, H, W, 3]`.
pub fn forward_logits<T: Float>(model: &SegModel, store: &ParamStore<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    let g = Graph::new(store, GraphOptions::eval());
    let x = g.constant(images.clone());
    Ok(model.forward(&g, &x)?.logits.value().clone())
}

fn offsets(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    let last = extent - window;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().expect("non-empty") != last {
        out.push(last);
    }
    out
}

/// Runs `model` on overlapping `window` crops placed every `stride` pixels
/// (the last crop flush with the far edge; `stride <= window`) and averages the overlapping
/// logits per pixel. Images smaller than the window are zero-padded at the
/// bottom/right and the padding is cropped from the result.
pub fn sliding_window_infer<T: Float>(
    image: &Tensor<T>,
    window: (usize, usize),
    stride: (usize, usize),
    mut model: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let &[n, h, w, c] = image.shape() else {
        return Err(invalid(format!("expected [N, H, W, C] image, got {:?}", image.shape())));
    };
    let (wh, ww) = window;
    let (sh, sw) = stride;
    if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
        return Err(invalid("window and stride must be positive"));
    }
    if sh > wh || sw > ww {
        return Err(invalid(format!(
            "stride {stride:?} exceeds window {window:?}; pixels would be skipped"
        )));
    }
    let (ph, pw) = (h.max(wh), w.max(ww));
    let src = image.data();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts = vec![0u32; ph * pw];
    let mut k = 0;
    for &top in &offsets(ph, wh, sh) {
        for &left in &offsets(pw, ww, sw) {
            let mut crop = vec![T::zero(); n * wh * ww * c];
            for b in 0..n {
                for r in 0..wh {
                    let (sr, dst_row) = (top + r, (b * wh + r) * ww);
                    if sr >= h {
                        continue;
                    }
                    for col in 0..ww {
                        let sc = left + col;
                        if sc < w {
                            let s = ((b * h + sr) * w + sc) * c;
                            crop[(dst_row + col) * c..(dst_row + col + 1) * c].copy_from_slice(&src[s..s + c]);
                        }
                    }
                }
            }
            let logits = model(&Tensor::from_vec(&[n, wh, ww, c], crop)?)?;
            let ls = logits.shape();
            if ls.len() != 4 || ls[..3] != [n, wh, ww] {
                return Err(invalid(format!("model returned {ls:?} for a {wh}x{ww} window")));
            }
            if sums.is_empty() {
                k = ls[3];
                sums = vec![0.0; n * ph * pw * k];
            } else if ls[3] != k {
                return Err(invalid("class count changed between windows"));
            }
            let ld = logits.data();
            for b in 0..n {
                for r in 0..wh {
                    for col in 0..ww {
                        let dst = ((b * ph + top + r) * pw + left + col) * k;
                        let s = ((b * wh + r) * ww + col) * k;
                        for j in 0..k {
                            sums[dst + j] += ld[s + j].as_f64();
                        }
                    }
                }
            }
            for r in 0..wh {
                for col in 0..ww {
                    counts[(top + r) * pw + left + col] += 1;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(n * h * w * k);
    for b in 0..n {
        for r in 0..h {
            for col in 0..w {
                let cnt = counts[r * pw + col] as f64;
                let s = ((b * ph + r) * pw + col) * k;
                out.extend(sums[s..s + k].iter().map(|&v| T::from_f64(v / cnt)));
            }
        }
    }
    Ok(Tensor::from_vec(&[n, h, w, k], out)?)
}
