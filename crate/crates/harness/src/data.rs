use std::collections::BTreeSet;

use lgseg_tensor::{Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// Mask value excluded from losses and metrics.
pub const IGNORE_INDEX: u8 = 255;

/// Per-channel statistics used to normalize images before the forward pass.
pub const PIXEL_MEAN: f32 = 0.5;
pub const PIXEL_STD: f32 = 0.25;

/// Row-major `H×W` class-id map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(invalid(format!(
                "mask of {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.labels[r * self.width + c]
    }

    /// Distinct labels present, the ignore value included.
    pub fn classes(&self) -> BTreeSet<u8> {
        self.labels.iter().copied().collect()
    }
}

/// One synthetic image `[H, W, 3]` with values in `[0, 1]` and its exact mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSegSample {
    pub image: Tensor<f32>,
    pub mask: Mask,
    pub seed: u64,
    pub index: usize,
}

impl SynthSegSample {
    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }
}

/// Fill colour of every foreground class; index 0 is unused (textured background).
pub fn palette(k: usize) -> Vec<[f32; 3]> {
    let fg = k.saturating_sub(1).max(1);
    (0..k)
        .map(|c| {
            if c == 0 {
                [0.35, 0.35, 0.35]
            } else {
                hsv((c - 1) as f32 / fg as f32, 0.85, 0.95)
            }
        })
        .collect()
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = h * 6.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { r0: f32, c0: f32, r1: f32, c1: f32 },
    Ellipse { cr: f32, cc: f32, rr: f32, rc: f32 },
    Triangle { pts: [(f32, f32); 3] },
}

impl Shape {
    fn sample(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let (hf, wf) = (h as f32, w as f32);
        let side = hf.min(wf);
        let size = |rng: &mut ChaCha8Rng| rng.gen_range(0.2..0.5) * side;
        match rng.gen_range(0..3) {
            0 => {
                let (sh, sw) = (size(rng), size(rng));
                let r0 = rng.gen_range(0.0..(hf - sh).max(1.0));
                let c0 = rng.gen_range(0.0..(wf - sw).max(1.0));
                Shape::Rect {
                    r0,
                    c0,
                    r1: r0 + sh,
                    c1: c0 + sw,
                }
            }
            1 => {
                let (rr, rc) = (size(rng) / 2.0, size(rng) / 2.0);
                Shape::Ellipse {
                    cr: rng.gen_range(rr..(hf - rr).max(rr + 1.0)),
                    cc: rng.gen_range(rc..(wf - rc).max(rc + 1.0)),
                    rr,
                    rc,
                }
            }
            _ => {
                let s = size(rng) * 1.4;
                let r0 = rng.gen_range(0.0..(hf - s).max(1.0));
                let c0 = rng.gen_range(0.0..(wf - s).max(1.0));
                let apex = rng.gen_range(0.2..0.8) * s;
                Shape::Triangle {
                    pts: [(r0, c0 + apex), (r0 + s, c0), (r0 + s, c0 + s)],
                }
            }
        }
    }

    fn contains(&self, r: f32, c: f32) -> bool {
        match *self {
            Shape::Rect { r0, c0, r1, c1 } => r >= r0 && r < r1 && c >= c0 && c < c1,
            Shape::Ellipse { cr, cc, rr, rc } => {
                let (dr, dc) = ((r - cr) / rr, (c - cc) / rc);
                dr * dr + dc * dc <= 1.0
            }
            Shape::Triangle { pts } => {
                let edge = |a: (f32, f32), b: (f32, f32)| (b.0 - a.0) * (c - a.1) - (b.1 - a.1) * (r - a.0);
                let d = [edge(pts[0], pts[1]), edge(pts[1], pts[2]), edge(pts[2], pts[0])];
                d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
            }
        }
    }
}

/// Sample `index` of the corpus seeded by `seed`: coloured rectangles, ellipses
/// and triangles over a striped, noisy grey background.
///
/// Sample `i` always contains class `1 + i % (K - 1)`, so any corpus of at
/// least `K - 1` samples covers every class.
pub fn synth_sample(height: usize, width: usize, k: usize, seed: u64, index: usize) -> Result<SynthSegSample> {
    if !(2..=IGNORE_INDEX as usize).contains(&k) {
        return Err(invalid(format!("num_classes must be in 2..=255, got {k}")));
    }
    if height == 0 || width == 0 {
        return Err(invalid("image extents must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let colours = palette(k);

    let freq_r = rng.gen_range(0.1..0.6f32);
    let freq_c = rng.gen_range(0.1..0.6f32);
    let phase = rng.gen_range(0.0..std::f32::consts::TAU);
    let mut image = vec![0f32; height * width * 3];
    for r in 0..height {
        for c in 0..width {
            let stripe = 0.1 * (freq_r * r as f32 + freq_c * c as f32 + phase).sin();
            for ch in 0..3 {
                image[(r * width + c) * 3 + ch] = colours[0][ch] + stripe + rng.gen_range(-0.04..0.04);
            }
        }
    }

    let mut labels = vec![0u8; height * width];
    let shapes = rng.gen_range(1..=3usize.min(k - 1).max(1));
    for s in 0..shapes {
        let class = if s == 0 {
            1 + index % (k - 1)
        } else {
            rng.gen_range(1..k)
        };
        let shape = Shape::sample(&mut rng, height, width);
        for r in 0..height {
            for c in 0..width {
                if shape.contains(r as f32 + 0.5, c as f32 + 0.5) {
                    labels[r * width + c] = class as u8;
                    for ch in 0..3 {
                        image[(r * width + c) * 3 + ch] = colours[class][ch] + rng.gen_range(-0.05..0.05);
                    }
                }
            }
        }
    }
    for v in &mut image {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(SynthSegSample {
        image: Tensor::from_vec(&[height, width, 3], image)?,
        mask: Mask::new(height, width, labels)?,
        seed,
        index,
    })
}

/// `n` samples, each a pure function of `(seed, index)`.
pub fn synth_seg_dataset(n: usize, height: usize, width: usize, k: usize, seed: u64) -> Result<Vec<SynthSegSample>> {
    (0..n).map(|i| synth_sample(height, width, k, seed, i)).collect()
}

/// Stacks samples of equal size into a normalized `[N, H, W, 3]` batch.
pub fn batch_images<T: Float>(samples: &[&SynthSegSample]) -> Result<Tensor<T>> {
    let first = samples.first().ok_or_else(|| invalid("empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(samples.len() * h * w * 3);
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            return Err(invalid(format!(
                "batch mixes {}x{} with {h}x{w} samples",
                s.height(),
                s.width()
            )));
        }
        data.extend(
            s.image
                .data()
                .iter()
                .map(|&v| T::from_f64(((v - PIXEL_MEAN) / PIXEL_STD) as f64)),
        );
    }
    Ok(Tensor::from_vec(&[samples.len(), h, w, 3], data)?)
}

/// Concatenated mask labels of a batch, ignore value kept as `255`.
pub fn batch_labels(samples: &[&SynthSegSample]) -> Vec<usize> {
    samples
        .iter()
        .flat_map(|s| s.mask.labels.iter().map(|&l| l as usize))
        .collect()
}
