//! Channels-last 2D convolution (cross-correlation) with groups.
//!
//! Input `[N, H, W, C_in]`, kernel `[kh, kw, C_in / groups, C_out]`.

use rayon::prelude::*;

use crate::dtype::Float;
use crate::error::{invalid, mismatch, Result};
use crate::graph::Var;
use crate::ops::linalg::gemm;
use crate::tensor::Tensor;

/// Stride and zero padding of a convolution, per spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
            groups,
        }
    }

    pub fn out_extent(in_extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        (in_extent + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cg: usize,
    cout: usize,
    cog: usize,
    groups: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn depthwise(&self) -> bool {
        self.groups == self.cin && self.cout == self.cin
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    fn in_per_sample(&self) -> usize {
        self.h * self.w * self.cin
    }

    fn out_per_sample(&self) -> usize {
        self.ho * self.wo * self.cout
    }

    /// Input coordinate for output `o` and kernel tap `k`, if inside the image.
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < extent)
    }
}

fn geometry(x: &[usize], k: &[usize], spec: Conv2dSpec) -> Result<Geom> {
    if x.len() != 4 || k.len() != 4 {
        return Err(mismatch("conv2d", x, k));
    }
    let (n, h, w, cin) = (x[0], x[1], x[2], x[3]);
    let (kh, kw, cg, cout) = (k[0], k[1], k[2], k[3]);
    let groups = spec.groups;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 || cg != cin / groups {
        return Err(invalid(
            "conv2d",
            format!("groups={groups} incompatible with C_in={cin}, C_out={cout}, kernel {k:?}"),
        ));
    }
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    if sh == 0 || sw == 0 {
        return Err(invalid("conv2d", "stride must be positive"));
    }
    let ho = Conv2dSpec::out_extent(h, kh, sh, ph);
    let wo = Conv2dSpec::out_extent(w, kw, sw, pw);
    let (Some(ho), Some(wo)) = (ho, wo) else {
        return Err(invalid(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {h}x{w}"),
        ));
    };
    Ok(Geom {
        n,
        h,
        w,
        cin,
        kh,
        kw,
        cg,
        cout,
        cog: cout / groups,
        groups,
        sh,
        sw,
        ph,
        pw,
        ho,
        wo,
    })
}

fn im2col<T: Float>(xn: &[T], g: &Geom, group: usize) -> Vec<T> {
    let kdim = g.kh * g.kw * g.cg;
    let c0 = group * g.cg;
    let mut cols = vec![T::zero(); g.ho * g.wo * kdim];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * kdim..(oy * g.wo + ox + 1) * kdim];
            for ky in 0..g.kh {
                let Some(iy) = Geom::src(oy, ky, g.sh, g.ph, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = Geom::src(ox, kx, g.sw, g.pw, g.w) else {
                        continue;
                    };
                    let src = (iy * g.w + ix) * g.cin + c0;
                    let dst = (ky * g.kw + kx) * g.cg;
                    row[dst..dst + g.cg].copy_from_slice(&xn[src..src + g.cg]);
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Float>(cols: &[T], dxn: &mut [T], g: &Geom, group: usize) {
    let kdim = g.kh * g.kw * g.cg;
    let c0 = group * g.cg;
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * kdim..(oy * g.wo + ox + 1) * kdim];
            for ky in 0..g.kh {
                let Some(iy) = Geom::src(oy, ky, g.sh, g.ph, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = Geom::src(ox, kx, g.sw, g.pw, g.w) else {
                        continue;
                    };
                    let dst = (iy * g.w + ix) * g.cin + c0;
                    let src = (ky * g.kw + kx) * g.cg;
                    for c in 0..g.cg {
                        dxn[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
}

/// Kernel columns of one group as a contiguous `[kh*kw*cg, cog]` matrix.
fn group_kernel<T: Float>(k: &[T], g: &Geom, group: usize) -> Vec<T> {
    if g.groups == 1 {
        return k.to_vec();
    }
    let kdim = g.kh * g.kw * g.cg;
    let mut out = Vec::with_capacity(kdim * g.cog);
    for r in 0..kdim {
        let base = r * g.cout + group * g.cog;
        out.extend_from_slice(&k[base..base + g.cog]);
    }
    out
}

fn forward_general<T: Float>(x: &[T], k: &[T], g: &Geom) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.out_per_sample()];
    let kernels: Vec<Vec<T>> = (0..g.groups).map(|gi| group_kernel(k, g, gi)).collect();
    let kdim = g.kh * g.kw * g.cg;
    let positions = g.ho * g.wo;
    out.par_chunks_mut(g.out_per_sample().max(1))
        .enumerate()
        .for_each(|(b, on)| {
            let xn = &x[b * g.in_per_sample()..(b + 1) * g.in_per_sample()];
            for (gi, kern) in kernels.iter().enumerate() {
                if g.pointwise() && g.groups == 1 {
                    gemm(xn, kern, on, positions, kdim, g.cog, false, false, false);
                    continue;
                }
                let cols = im2col(xn, g, gi);
                if g.groups == 1 {
                    gemm(&cols, kern, on, positions, kdim, g.cog, false, false, false);
                } else {
                    let mut tmp = vec![T::zero(); positions * g.cog];
                    gemm(&cols, kern, &mut tmp, positions, kdim, g.cog, false, false, false);
                    for (p, row) in tmp.chunks_exact(g.cog).enumerate() {
                        on[p * g.cout + gi * g.cog..p * g.cout + (gi + 1) * g.cog].copy_from_slice(row);
                    }
                }
            }
        });
    out
}

/// Returns (dx, dk) for the im2col path.
fn backward_general<T: Float>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &Geom,
    need_x: bool,
    need_k: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let kdim = g.kh * g.kw * g.cg;
    let positions = g.ho * g.wo;
    let kernels: Vec<Vec<T>> = (0..g.groups).map(|gi| group_kernel(k, g, gi)).collect();
    // per-sample results, reduced in sample order afterwards for determinism
    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..g.n)
        .into_par_iter()
        .map(|b| {
            let xn = &x[b * g.in_per_sample()..(b + 1) * g.in_per_sample()];
            let dyn_ = &dy[b * g.out_per_sample()..(b + 1) * g.out_per_sample()];
            let mut dxn = need_x.then(|| vec![T::zero(); g.in_per_sample()]);
            let mut dkn = need_k.then(|| vec![T::zero(); kdim * g.cout]);
            for (gi, kern) in kernels.iter().enumerate() {
                let dyg: Vec<T> = if g.groups == 1 {
                    dyn_.to_vec()
                } else {
                    dyn_.chunks_exact(g.cout)
                        .flat_map(|row| row[gi * g.cog..(gi + 1) * g.cog].iter().copied())
                        .collect()
                };
                let direct = g.pointwise() && g.groups == 1;
                if let Some(dxn) = dxn.as_mut() {
                    if direct {
                        gemm(&dyg, kern, dxn, positions, g.cog, kdim, false, true, false);
                    } else {
                        let mut dcols = vec![T::zero(); positions * kdim];
                        gemm(&dyg, kern, &mut dcols, positions, g.cog, kdim, false, true, false);
                        col2im_add(&dcols, dxn, g, gi);
                    }
                }
                if let Some(dkn) = dkn.as_mut() {
                    let mut dkg = vec![T::zero(); kdim * g.cog];
                    if direct {
                        gemm(xn, &dyg, &mut dkg, kdim, positions, g.cog, true, false, false);
                    } else {
                        let cols = im2col(xn, g, gi);
                        gemm(&cols, &dyg, &mut dkg, kdim, positions, g.cog, true, false, false);
                    }
                    for r in 0..kdim {
                        dkn[r * g.cout + gi * g.cog..r * g.cout + (gi + 1) * g.cog]
                            .copy_from_slice(&dkg[r * g.cog..(r + 1) * g.cog]);
                    }
                }
            }
            (dxn, dkn)
        })
        .collect();
    let dx = need_x.then(|| {
        per_sample
            .iter()
            .flat_map(|(dxn, _)| dxn.as_ref().expect("dx").iter().copied())
            .collect()
    });
    let dk = need_k.then(|| {
        let mut acc = vec![T::zero(); kdim * g.cout];
        for (_, dkn) in &per_sample {
            for (a, &v) in acc.iter_mut().zip(dkn.as_ref().expect("dk")) {
                *a += v;
            }
        }
        acc
    });
    (dx, dk)
}

fn forward_depthwise<T: Float>(x: &[T], k: &[T], g: &Geom) -> Vec<T> {
    let c = g.cin;
    let mut out = vec![T::zero(); g.n * g.out_per_sample()];
    out.par_chunks_mut((g.wo * c).max(1))
        .enumerate()
        .for_each(|(row_id, orow)| {
            let (b, oy) = (row_id / g.ho, row_id % g.ho);
            let xn = &x[b * g.in_per_sample()..(b + 1) * g.in_per_sample()];
            for ox in 0..g.wo {
                let o = &mut orow[ox * c..(ox + 1) * c];
                for ky in 0..g.kh {
                    let Some(iy) = Geom::src(oy, ky, g.sh, g.ph, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = Geom::src(ox, kx, g.sw, g.pw, g.w) else {
                            continue;
                        };
                        let xs = &xn[(iy * g.w + ix) * c..(iy * g.w + ix + 1) * c];
                        let ks = &k[(ky * g.kw + kx) * c..(ky * g.kw + kx + 1) * c];
                        for ch in 0..c {
                            o[ch] += xs[ch] * ks[ch];
                        }
                    }
                }
            }
        });
    out
}

fn backward_depthwise<T: Float>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &Geom,
    need_x: bool,
    need_k: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let c = g.cin;
    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..g.n)
        .into_par_iter()
        .map(|b| {
            let xn = &x[b * g.in_per_sample()..(b + 1) * g.in_per_sample()];
            let dyn_ = &dy[b * g.out_per_sample()..(b + 1) * g.out_per_sample()];
            let mut dxn = need_x.then(|| vec![T::zero(); g.in_per_sample()]);
            let mut dkn = need_k.then(|| vec![T::zero(); g.kh * g.kw * c]);
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let go = &dyn_[(oy * g.wo + ox) * c..(oy * g.wo + ox + 1) * c];
                    for ky in 0..g.kh {
                        let Some(iy) = Geom::src(oy, ky, g.sh, g.ph, g.h) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            let Some(ix) = Geom::src(ox, kx, g.sw, g.pw, g.w) else {
                                continue;
                            };
                            let xi = (iy * g.w + ix) * c;
                            let ki = (ky * g.kw + kx) * c;
                            if let Some(dxn) = dxn.as_mut() {
                                for ch in 0..c {
                                    dxn[xi + ch] += go[ch] * k[ki + ch];
                                }
                            }
                            if let Some(dkn) = dkn.as_mut() {
                                for ch in 0..c {
                                    dkn[ki + ch] += go[ch] * xn[xi + ch];
                                }
                            }
                        }
                    }
                }
            }
            (dxn, dkn)
        })
        .collect();
    let dx = need_x.then(|| {
        per_sample
            .iter()
            .flat_map(|(d, _)| d.as_ref().expect("dx").iter().copied())
            .collect()
    });
    let dk = need_k.then(|| {
        let mut acc = vec![T::zero(); g.kh * g.kw * c];
        for (_, d) in &per_sample {
            for (a, &v) in acc.iter_mut().zip(d.as_ref().expect("dk")) {
                *a += v;
            }
        }
        acc
    });
    (dx, dk)
}

impl<'g, T: Float> Var<'g, T> {
    /// 2D cross-correlation; output extent `floor((in + 2*pad - k) / stride) + 1`.
    pub fn conv2d(&self, kernel: &Var<'g, T>, spec: Conv2dSpec) -> Result<Var<'g, T>> {
        let geom = geometry(self.shape(), kernel.shape(), spec)?;
        self.graph()
            .add_macs((geom.n * geom.ho * geom.wo * geom.kh * geom.kw * geom.cg * geom.cout) as u64);
        let (x, k) = (self.value().clone(), kernel.value().clone());
        let out = if geom.depthwise() {
            forward_depthwise(x.data(), k.data(), &geom)
        } else {
            forward_general(x.data(), k.data(), &geom)
        };
        let out_shape = vec![geom.n, geom.ho, geom.wo, geom.cout];
        self.graph().record(
            "conv2d",
            Tensor::raw(out_shape, out),
            &[self, kernel],
            move |dy, needs| {
                let (dx, dk) = if geom.depthwise() {
                    backward_depthwise(x.data(), k.data(), dy.data(), &geom, needs[0], needs[1])
                } else {
                    backward_general(x.data(), k.data(), dy.data(), &geom, needs[0], needs[1])
                };
                vec![
                    dx.map(|d| Tensor::raw(x.shape().to_vec(), d)),
                    dk.map(|d| Tensor::raw(k.shape().to_vec(), d)),
                ]
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, GraphOptions};

    #[test]
    fn output_extent_formula() {
        assert_eq!(Conv2dSpec::out_extent(224, 3, 2, 1), Some(112));
        assert_eq!(Conv2dSpec::out_extent(7, 3, 2, 1), Some(4));
        assert_eq!(Conv2dSpec::out_extent(2, 5, 1, 0), None);
    }

    #[test]
    fn pointwise_identity_kernel() {
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let data: Vec<f64> = (0..2 * 3 * 3 * 4).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = g.constant(Tensor::from_vec(&[2, 3, 3, 4], data).unwrap());
        let k = g.constant(Tensor::eye(4).reshape(&[1, 1, 4, 4]).unwrap());
        let y = x.conv2d(&k, Conv2dSpec::new(1, 0, 1)).unwrap();
        assert!(y.value().bit_eq(x.value()));
    }

    #[test]
    fn depthwise_box_filter_on_constant() {
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let x = g.constant(Tensor::full(&[1, 5, 5, 2], 3.0));
        let k = g.constant(Tensor::full(&[3, 3, 1, 2], 1.0 / 9.0));
        let y = x.conv2d(&k, Conv2dSpec::new(1, 1, 2)).unwrap();
        for yy in 1..4 {
            for xx in 1..4 {
                for c in 0..2 {
                    let v = y.value().data()[(yy * 5 + xx) * 2 + c];
                    assert!((v - 3.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bad_groups_rejected() {
        let g = Graph::<f32>::standalone(GraphOptions::eval());
        let x = g.constant(Tensor::zeros(&[1, 4, 4, 3]));
        let k = g.constant(Tensor::zeros(&[3, 3, 1, 4]));
        assert!(x.conv2d(&k, Conv2dSpec::new(1, 1, 2)).is_err());
    }
}
