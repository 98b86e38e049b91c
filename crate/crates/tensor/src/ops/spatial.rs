//! Resampling and pooling over `[N, H, W, C]` maps.

use crate::dtype::Float;
use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Source taps for one output coordinate: `(lo, hi, w_lo, w_hi)`.
type Tap = (usize, usize, f64, f64);

/// Half-pixel (align-corners = false) source taps along one axis.
pub fn bilinear_taps(in_extent: usize, out_extent: usize) -> Vec<Tap> {
    let scale = in_extent as f64 / out_extent as f64;
    (0..out_extent)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_extent - 1);
            let hi = (lo + 1).min(in_extent - 1);
            let frac = src - lo as f64;
            (lo, hi, 1.0 - frac, frac)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Pooling window geometry. Windows overhanging the border are clipped, and
/// averages are taken over the in-bounds elements only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2dSpec {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub mode: PoolMode,
}

impl Pool2dSpec {
    pub fn square(window: usize, stride: usize, mode: PoolMode) -> Self {
        Self {
            window: (window, window),
            stride: (stride, stride),
            mode,
        }
    }

    /// `ceil((in - k) / s) + 1`, or 1 when the window covers the whole extent.
    pub fn out_extent(in_extent: usize, k: usize, s: usize) -> usize {
        if in_extent <= k {
            1
        } else {
            (in_extent - k).div_ceil(s) + 1
        }
    }
}

impl<'g, T: Float> Var<'g, T> {
    /// Bilinear resize with half-pixel centers; the identity when sizes match.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Var<'g, T>> {
        let shape = self.shape().to_vec();
        if shape.len() != 4 {
            return Err(invalid("bilinear_resize", format!("expected [N,H,W,C], got {shape:?}")));
        }
        if out_h == 0 || out_w == 0 || shape[1] == 0 || shape[2] == 0 {
            return Err(invalid("bilinear_resize", "extents must be positive"));
        }
        let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        if (h, w) == (out_h, out_w) {
            return Ok(self.clone());
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let x = self.value().data();
        let mut out = vec![T::zero(); n * out_h * out_w * c];
        for b in 0..n {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let o = ((b * out_h + oy) * out_w + ox) * c;
                    let taps = [
                        (y0, x0, wy0 * wx0),
                        (y0, x1, wy0 * wx1),
                        (y1, x0, wy1 * wx0),
                        (y1, x1, wy1 * wx1),
                    ];
                    for (iy, ix, wt) in taps {
                        let wt = T::from_f64(wt);
                        let i = ((b * h + iy) * w + ix) * c;
                        for ch in 0..c {
                            out[o + ch] += wt * x[i + ch];
                        }
                    }
                }
            }
        }
        self.graph().record(
            "bilinear_resize",
            Tensor::raw(vec![n, out_h, out_w, c], out),
            &[self],
            move |g, _| {
                let gd = g.data();
                let mut d = vec![T::zero(); n * h * w * c];
                for b in 0..n {
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let o = ((b * out_h + oy) * out_w + ox) * c;
                            let taps = [
                                (y0, x0, wy0 * wx0),
                                (y0, x1, wy0 * wx1),
                                (y1, x0, wy1 * wx0),
                                (y1, x1, wy1 * wx1),
                            ];
                            for (iy, ix, wt) in taps {
                                let wt = T::from_f64(wt);
                                let i = ((b * h + iy) * w + ix) * c;
                                for ch in 0..c {
                                    d[i + ch] += wt * gd[o + ch];
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::raw(shape.clone(), d))]
            },
        )
    }

    pub fn pool2d(&self, spec: Pool2dSpec) -> Result<Var<'g, T>> {
        let shape = self.shape().to_vec();
        if shape.len() != 4 {
            return Err(invalid("pool2d", format!("expected [N,H,W,C], got {shape:?}")));
        }
        let (kh, kw) = spec.window;
        let (sh, sw) = spec.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(invalid("pool2d", "window and stride must be positive"));
        }
        let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let ho = Pool2dSpec::out_extent(h, kh, sh);
        let wo = Pool2dSpec::out_extent(w, kw, sw);
        let x = self.value().data();
        let mut out = vec![T::zero(); n * ho * wo * c];
        // max mode: flat input index of the winning element per output
        let mut argmax = vec![0usize; if spec.mode == PoolMode::Max { out.len() } else { 0 }];
        for b in 0..n {
            for oy in 0..ho {
                let ys = oy * sh..(oy * sh + kh).min(h);
                for ox in 0..wo {
                    let xs = ox * sw..(ox * sw + kw).min(w);
                    let o = ((b * ho + oy) * wo + ox) * c;
                    let count = T::from_count(ys.len() * xs.len());
                    for ch in 0..c {
                        let mut best = T::neg_infinity();
                        let mut best_i = 0;
                        let mut acc = T::zero();
                        for iy in ys.clone() {
                            for ix in xs.clone() {
                                let i = ((b * h + iy) * w + ix) * c + ch;
                                acc += x[i];
                                if x[i] > best {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                        match spec.mode {
                            PoolMode::Avg => out[o + ch] = acc / count,
                            PoolMode::Max => {
                                out[o + ch] = best;
                                argmax[o + ch] = best_i;
                            }
                        }
                    }
                }
            }
        }
        self.graph()
            .record("pool2d", Tensor::raw(vec![n, ho, wo, c], out), &[self], move |g, _| {
                let gd = g.data();
                let mut d = vec![T::zero(); n * h * w * c];
                match spec.mode {
                    PoolMode::Max => {
                        for (o, &i) in argmax.iter().enumerate() {
                            d[i] += gd[o];
                        }
                    }
                    PoolMode::Avg => {
                        for b in 0..n {
                            for oy in 0..ho {
                                let ys = oy * sh..(oy * sh + kh).min(h);
                                for ox in 0..wo {
                                    let xs = ox * sw..(ox * sw + kw).min(w);
                                    let o = ((b * ho + oy) * wo + ox) * c;
                                    let count = T::from_count(ys.len() * xs.len());
                                    for iy in ys.clone() {
                                        for ix in xs.clone() {
                                            let i = ((b * h + iy) * w + ix) * c;
                                            for ch in 0..c {
                                                d[i + ch] += gd[o + ch] / count;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::raw(shape.clone(), d))]
            })
    }

    /// Mean over all spatial positions: `[N, ..., C] -> [N, C]`.
    pub fn global_avg_pool(&self) -> Result<Var<'g, T>> {
        let shape = self.shape().to_vec();
        if shape.len() < 2 {
            return Err(invalid("global_avg_pool", format!("rank too small: {shape:?}")));
        }
        let n = shape[0];
        let c = shape[shape.len() - 1];
        let per = self.value().numel() / (n * c).max(1);
        let denom = T::from_count(per.max(1));
        let mut out = vec![T::zero(); n * c];
        for (b, sample) in self.value().data().chunks_exact((per * c).max(1)).enumerate() {
            for row in sample.chunks_exact(c) {
                for k in 0..c {
                    out[b * c + k] += row[k];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= denom);
        self.graph()
            .record("global_avg_pool", Tensor::raw(vec![n, c], out), &[self], move |g, _| {
                let mut d = Vec::with_capacity(n * per * c);
                for b in 0..n {
                    for _ in 0..per {
                        d.extend(g.data()[b * c..(b + 1) * c].iter().map(|&v| v / denom));
                    }
                }
                vec![Some(Tensor::raw(shape.clone(), d))]
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, GraphOptions};

    #[test]
    fn same_size_resize_is_identity() {
        let g = Graph::<f32>::standalone(GraphOptions::eval());
        let data: Vec<f32> = (0..18).map(|i| i as f32 * 0.37).collect();
        let x = g.constant(Tensor::from_vec(&[1, 3, 3, 2], data).unwrap());
        assert!(x.bilinear_resize(3, 3).unwrap().value().bit_eq(x.value()));
    }

    #[test]
    fn constant_map_stays_constant() {
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let x = g.constant(Tensor::full(&[1, 3, 5, 2], 2.5));
        let y = x.bilinear_resize(7, 4).unwrap();
        assert!(y.value().data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        let p = x.pool2d(Pool2dSpec::square(2, 2, PoolMode::Avg)).unwrap();
        assert_eq!(p.shape(), &[1, 2, 3, 2]);
        assert!(p.value().data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn max_pool_picks_maximum() {
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let x = g.constant(Tensor::from_f64(&[1, 2, 2, 1], &[1., 2., 3., 4.]).unwrap());
        let y = x.pool2d(Pool2dSpec::square(2, 2, PoolMode::Max)).unwrap();
        assert_eq!(y.value().data(), &[4.0]);
    }

    #[test]
    fn ceil_mode_extents() {
        assert_eq!(Pool2dSpec::out_extent(56, 7, 7), 8);
        assert_eq!(Pool2dSpec::out_extent(10, 7, 7), 2);
        assert_eq!(Pool2dSpec::out_extent(4, 7, 7), 1);
    }
}
