use lgseg_tensor::{bilinear_taps, Tensor};
use rand::Rng;

use crate::data::{Mask, SynthSegSample, IGNORE_INDEX, PIXEL_MEAN};
use crate::error::{invalid, Result};

/// Random resize, crop (with padding) and horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Uniform range of the resize ratio.
    pub scale: (f64, f64),
    /// Output extents `(h, w)`.
    pub crop: (usize, usize),
    /// Flip with probability 1/2.
    pub flip: bool,
}

impl AugmentConfig {
    pub fn standard(crop: (usize, usize)) -> Self {
        Self {
            scale: (0.5, 2.0),
            crop,
            flip: true,
        }
    }
}

/// Mirrors image and mask left to right.
pub fn hflip(sample: &SynthSegSample) -> SynthSegSample {
    let (h, w) = (sample.height(), sample.width());
    let src = sample.image.data();
    let mut image = Vec::with_capacity(src.len());
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in (0..w).rev() {
            image.extend_from_slice(&src[(r * w + c) * 3..(r * w + c) * 3 + 3]);
            labels.push(sample.mask.get(r, c));
        }
    }
    rebuild(sample, h, w, image, labels)
}

/// Bilinear resize of the image, nearest-neighbour resize of the mask.
pub fn resize(sample: &SynthSegSample, out_h: usize, out_w: usize) -> Result<SynthSegSample> {
    if out_h == 0 || out_w == 0 {
        return Err(invalid("resize target must be positive"));
    }
    let (h, w) = (sample.height(), sample.width());
    if (out_h, out_w) == (h, w) {
        return Ok(sample.clone());
    }
    let (rows, cols) = (bilinear_taps(h, out_h), bilinear_taps(w, out_w));
    let src = sample.image.data();
    let at = |r: usize, c: usize, ch: usize| src[(r * w + c) * 3 + ch] as f64;
    let mut image = Vec::with_capacity(out_h * out_w * 3);
    for &(r0, r1, wr0, wr1) in &rows {
        for &(c0, c1, wc0, wc1) in &cols {
            for ch in 0..3 {
                let v = wr0 * (wc0 * at(r0, c0, ch) + wc1 * at(r0, c1, ch))
                    + wr1 * (wc0 * at(r1, c0, ch) + wc1 * at(r1, c1, ch));
                image.push(v as f32);
            }
        }
    }
    let near = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    let mut labels = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        for c in 0..out_w {
            labels.push(sample.mask.get(near(r, out_h, h), near(c, out_w, w)));
        }
    }
    Ok(rebuild(sample, out_h, out_w, image, labels))
}

/// `h×w` window at `(top, left)`; pixels outside the source become mean grey
/// with the ignore label.
pub fn crop(sample: &SynthSegSample, top: usize, left: usize, h: usize, w: usize) -> SynthSegSample {
    let (sh, sw) = (sample.height(), sample.width());
    let src = sample.image.data();
    let mut image = Vec::with_capacity(h * w * 3);
    let mut labels = Vec::with_capacity(h * w);
    for r in top..top + h {
        for c in left..left + w {
            if r < sh && c < sw {
                image.extend_from_slice(&src[(r * sw + c) * 3..(r * sw + c) * 3 + 3]);
                labels.push(sample.mask.get(r, c));
            } else {
                image.extend_from_slice(&[PIXEL_MEAN; 3]);
                labels.push(IGNORE_INDEX);
            }
        }
    }
    rebuild(sample, h, w, image, labels)
}

pub fn augment(sample: &SynthSegSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<SynthSegSample> {
    let (lo, hi) = cfg.scale;
    if !(lo > 0.0 && lo <= hi) {
        return Err(invalid(format!("bad scale range {lo}..{hi}")));
    }
    let ratio = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let rh = ((sample.height() as f64 * ratio).round() as usize).max(1);
    let rw = ((sample.width() as f64 * ratio).round() as usize).max(1);
    let resized = resize(sample, rh, rw)?;
    let (ch, cw) = cfg.crop;
    let top = rng.gen_range(0..=rh.saturating_sub(ch));
    let left = rng.gen_range(0..=rw.saturating_sub(cw));
    let cropped = crop(&resized, top, left, ch, cw);
    Ok(if cfg.flip && rng.gen_bool(0.5) {
        hflip(&cropped)
    } else {
        cropped
    })
}

fn rebuild(sample: &SynthSegSample, h: usize, w: usize, image: Vec<f32>, labels: Vec<u8>) -> SynthSegSample {
    SynthSegSample {
        image: Tensor::from_vec(&[h, w, 3], image).expect("image extents"),
        mask: Mask {
            height: h,
            width: w,
            labels,
        },
        seed: sample.seed,
        index: sample.index,
    }
}
