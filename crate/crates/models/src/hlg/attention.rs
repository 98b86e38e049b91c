//! Local window attention and window-embedding global attention sharing one
//! set of Q/K/V/O projections.

use std::sync::Arc;

use lgseg_tensor::{Conv2dSpec, Float, Graph, Init, ParamBuilder, ParamId, Pool2dSpec, PoolMode, Tensor, Var};

use crate::attention::{attend, merge_heads, split_heads};
use crate::config::{GlobalBias, WindowEmbedding};
use crate::error::{input_err, Result};
use crate::hlg::window::{WindowGeometry, WindowPartition};
use crate::nn::{Conv, LayerNorm, Linear};

/// Logit assigned to padded keys.
pub const MASKED_LOGIT: f64 = -1e9;

/// Static shape of one attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub dilation: usize,
    /// Token grid the global bias table is sized for.
    pub native_grid: (usize, usize),
}

/// Per-axis clipping range for the query-to-window-center offsets of B_G.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffsetAxis {
    pub lo: isize,
    pub extent: usize,
}

impl OffsetAxis {
    pub fn new(native: usize, window: usize) -> Self {
        let (n, r) = (native as isize, window as isize);
        let g = (n + r - 1) / r;
        let lo = -((g - 1) * r + r / 2);
        let hi = n - 1 - r / 2;
        Self {
            lo,
            extent: (hi - lo + 1) as usize,
        }
    }

    /// Table slot for query position `p` against the window with index `k`.
    pub fn slot(&self, p: usize, k: usize, window: usize) -> usize {
        let off = p as isize - (k * window + window / 2) as isize;
        (off.clamp(self.lo, self.lo + self.extent as isize - 1) - self.lo) as usize
    }
}

#[derive(Debug, Clone)]
pub enum GlobalBiasTable {
    /// `[extent_h · extent_w, m]`, looked up by clipped offsets.
    Relative {
        table: ParamId,
        rows: OffsetAxis,
        cols: OffsetAxis,
    },
    /// `[m, N_h·N_w, G]` over the native grid only.
    Dense { table: ParamId },
}

#[derive(Debug, Clone)]
pub enum WindowEmbedder {
    Pool(PoolMode),
    /// `R × R` depth-wise conv with stride `R` after zero padding to a multiple of `R`.
    DwConv(Conv),
}

#[derive(Debug, Clone)]
pub struct LocalGlobalAttention {
    pub shape: AttentionShape,
    pub norm_local: LayerNorm,
    pub norm_global: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    /// Zero-initialized depth-wise `3 × 3` kernel adding `DWConv(V)` to the global queries.
    pub fixup: Conv,
    /// `[(2R−1)², m]`.
    pub local_table: ParamId,
    pub global_table: GlobalBiasTable,
    pub embedder: WindowEmbedder,
}

/// Intermediate products of the local half, reused by the global half.
pub struct LocalOutput<'g, T: Float> {
    pub z: Var<'g, T>,
    /// `Q` and `V` in grid layout `[N, H, W, C]`.
    pub q: Var<'g, T>,
    pub v: Var<'g, T>,
}

impl LocalGlobalAttention {
    pub fn new<T: Float>(
        b: &mut ParamBuilder<T>,
        shape: AttentionShape,
        embedding: WindowEmbedding,
        bias: GlobalBias,
    ) -> Self {
        let AttentionShape {
            channels: c,
            heads: m,
            window: r,
            native_grid: (nh, nw),
            ..
        } = shape;
        let bias_init = Init::TruncNormal { std: 0.02 };
        let global_table = match bias {
            GlobalBias::Relative => {
                let (rows, cols) = (OffsetAxis::new(nh, r), OffsetAxis::new(nw, r));
                GlobalBiasTable::Relative {
                    table: b.param("global_table", &[rows.extent * cols.extent, m], bias_init),
                    rows,
                    cols,
                }
            }
            GlobalBias::Dense => {
                let gl = nh.div_ceil(r) * nw.div_ceil(r);
                GlobalBiasTable::Dense {
                    table: b.param("global_table", &[m, nh * nw, gl], bias_init),
                }
            }
        };
        let embedder = match embedding {
            WindowEmbedding::AvgPool => WindowEmbedder::Pool(PoolMode::Avg),
            WindowEmbedding::MaxPool => WindowEmbedder::Pool(PoolMode::Max),
            WindowEmbedding::DwConv => WindowEmbedder::DwConv(b.scope("embed", |b| Conv {
                kernel: b.param("kernel", &[r, r, 1, c], Init::KaimingNormal { fan_in: r * r }),
                bias: Some(b.param("bias", &[c], Init::Zeros)),
                k: r,
                cin: c,
                cout: c,
                spec: Conv2dSpec::new(r, 0, c),
            })),
        };
        Self {
            shape,
            norm_local: LayerNorm::new(b, "norm_local", c),
            norm_global: LayerNorm::new(b, "norm_global", c),
            qkv: Linear::new(b, "qkv", c, 3 * c, true),
            proj: Linear::new(b, "proj", c, c, true),
            fixup: b.scope("fixup", |b| Conv {
                kernel: b.param("kernel", &[3, 3, 1, c], Init::Zeros),
                bias: None,
                k: 3,
                cin: c,
                cout: c,
                spec: Conv2dSpec::new(1, 1, c),
            }),
            local_table: b.param("local_table", &[(2 * r - 1) * (2 * r - 1), m], bias_init),
            global_table,
            embedder,
        }
    }

    pub fn num_params(&self) -> usize {
        let AttentionShape {
            channels: c,
            heads: m,
            window: r,
            native_grid: (nh, nw),
            ..
        } = self.shape;
        let global = match &self.global_table {
            GlobalBiasTable::Relative { rows, cols, .. } => rows.extent * cols.extent * m,
            GlobalBiasTable::Dense { .. } => m * nh * nw * nh.div_ceil(r) * nw.div_ceil(r),
        };
        let embed = match &self.embedder {
            WindowEmbedder::Pool(_) => 0,
            WindowEmbedder::DwConv(conv) => conv.num_params(),
        };
        4 * c + self.qkv.num_params() + self.proj.num_params() + 9 * c + (2 * r - 1) * (2 * r - 1) * m + global + embed
    }

    /// `B_W` realized as `[m, R², R²]`.
    pub fn local_bias<'g, T: Float>(&self, g: &'g Graph<T>) -> Result<Var<'g, T>> {
        let r = self.shape.window;
        let area = r * r;
        let span = 2 * r - 1;
        let mut idx = Vec::with_capacity(area * area);
        for i in 0..area {
            for j in 0..area {
                let dr = i / r + r - 1 - j / r;
                let dc = i % r + r - 1 - j % r;
                idx.push(Some(dr * span + dc));
            }
        }
        let rows = g.param(self.local_table).gather_rows(idx.into())?;
        Ok(rows.permute(&[1, 0])?.reshape(&[self.shape.heads, area, area])?)
    }

    /// `B_G` realized as `[m, h·w, G]` for an `h × w` query grid.
    pub fn global_bias<'g, T: Float>(&self, g: &'g Graph<T>, grid: (usize, usize)) -> Result<Var<'g, T>> {
        let (h, w) = grid;
        let (m, r) = (self.shape.heads, self.shape.window);
        let (gh, gw) = (h.div_ceil(r), w.div_ceil(r));
        match &self.global_table {
            GlobalBiasTable::Relative { table, rows, cols } => {
                let mut idx = Vec::with_capacity(h * w * gh * gw);
                for pr in 0..h {
                    for pc in 0..w {
                        for kr in 0..gh {
                            for kc in 0..gw {
                                idx.push(Some(rows.slot(pr, kr, r) * cols.extent + cols.slot(pc, kc, r)));
                            }
                        }
                    }
                }
                let t = g.param(*table).gather_rows(idx.into())?;
                Ok(t.permute(&[1, 0])?.reshape(&[m, h * w, gh * gw])?)
            }
            GlobalBiasTable::Dense { table } => {
                let t = g.param(*table);
                if grid != self.shape.native_grid {
                    return Err(input_err(
                        &[h, w],
                        format!("dense global bias is fixed to the {:?} grid", self.shape.native_grid),
                    ));
                }
                Ok(t)
            }
        }
    }

    /// Local half: `z = x + W_O · LocalAttn(LN(x))` plus the `Q`/`V` maps it computed.
    pub fn local<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>, drop_path: f64) -> Result<LocalOutput<'g, T>> {
        let s = x.shape();
        if s.len() != 4 || s[3] != self.shape.channels {
            return Err(input_err(s, format!("expected [N, H, W, {}]", self.shape.channels)));
        }
        let (n, c, m) = (s[0], self.shape.channels, self.shape.heads);
        let qkv = self.qkv.forward(g, &self.norm_local.forward(g, x)?)?;
        let part = WindowPartition::new(&qkv, self.shape.window, self.shape.dilation)?;
        let geom = part.geom;
        let (nw, area) = (geom.num_windows(), geom.window_area());
        let q = split_heads(&part.windows.slice(2, 0, c)?, m)?;
        let k = split_heads(&part.windows.slice(2, c, c)?, m)?;
        let v = split_heads(&part.windows.slice(2, 2 * c, c)?, m)?;
        let bw = self.local_bias(g)?;
        let attn = attend(&q, &k, &v, |logits| {
            let mut l = logits.reshape(&[n * nw, m, area, area])?.add_bias(&bw)?;
            if geom.is_padded() {
                let mask = g.constant(padding_mask(&geom, m));
                l = l.reshape(&[n, nw, m, area, area])?.add_bias(&mask)?;
            }
            Ok(l.reshape(&[n * nw * m, area, area])?)
        })?;
        if g.capturing() {
            g.capture("local_attention", attn.probs.value());
        }
        let out = part.assemble_values(&merge_heads(&attn.out, m)?)?;
        let branch = self.proj.forward(g, &out)?.drop_path(drop_path)?;
        Ok(LocalOutput {
            z: x.add(&branch)?,
            q: qkv.slice(3, 0, c)?,
            v: qkv.slice(3, 2 * c, c)?,
        })
    }

    /// `Q_L = Q + DWConv(V)` on the grid layout.
    pub fn fixup_query<'g, T: Float>(&self, g: &'g Graph<T>, q: &Var<'g, T>, v: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(q.add(&self.fixup.forward(g, v)?)?)
    }

    /// One vector per `R × R` window: `[N, H, W, C] -> [N, ⌈H/R⌉, ⌈W/R⌉, C]`.
    pub fn embed<'g, T: Float>(&self, g: &'g Graph<T>, z: &Var<'g, T>) -> Result<Var<'g, T>> {
        let r = self.shape.window;
        match &self.embedder {
            WindowEmbedder::Pool(mode) => Ok(z.pool2d(Pool2dSpec::square(r, r, *mode))?),
            WindowEmbedder::DwConv(conv) => {
                let s = z.shape();
                let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
                let (ph, pw) = (h.div_ceil(r) * r, w.div_ceil(r) * r);
                let padded = if (ph, pw) == (h, w) {
                    z.clone()
                } else {
                    let idx: Arc<[Option<usize>]> = (0..n * ph * pw)
                        .map(|i| {
                            let (b, rr, cc) = (i / (ph * pw), i / pw % ph, i % pw);
                            (rr < h && cc < w).then(|| (b * h + rr) * w + cc)
                        })
                        .collect();
                    z.reshape(&[n * h * w, c])?.gather_rows(idx)?.reshape(&[n, ph, pw, c])?
                };
                conv.forward(g, &padded)
            }
        }
    }

    /// Global half: `z_l + W_O · softmax(Q_L K_Gᵀ/√d + B_G) V_G`, with `K_G`, `V_G`
    /// projected from the window embeddings through the shared `W_K`, `W_V`.
    /// Captured as `global_attention` with shape `[N, m, h, w, gh, gw]`.
    pub fn global<'g, T: Float>(
        &self,
        g: &'g Graph<T>,
        z_l: &Var<'g, T>,
        q_l: &Var<'g, T>,
        drop_path: f64,
    ) -> Result<Var<'g, T>> {
        let s = z_l.shape();
        if q_l.shape() != s {
            return Err(input_err(q_l.shape(), format!("queries do not match the grid {s:?}")));
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let m = self.shape.heads;
        let zg = self.embed(g, &self.norm_global.forward(g, z_l)?)?;
        let (gh, gw) = (zg.shape()[1], zg.shape()[2]);
        let gl = gh * gw;
        let w_kv = g.param(self.qkv.weight).slice(1, c, 2 * c)?;
        let b_kv = match self.qkv.bias {
            Some(id) => Some(g.param(id).slice(0, c, 2 * c)?),
            None => None,
        };
        let kv = zg.linear(&w_kv, b_kv.as_ref())?.reshape(&[n, gl, 2 * c])?;
        let k = split_heads(&kv.slice(2, 0, c)?, m)?;
        let v = split_heads(&kv.slice(2, c, c)?, m)?;
        let q = split_heads(&q_l.reshape(&[n, h * w, c])?, m)?;
        let bg = self.global_bias(g, (h, w))?;
        let attn = attend(&q, &k, &v, |logits| {
            Ok(logits
                .reshape(&[n, m, h * w, gl])?
                .add_bias(&bg)?
                .reshape(&[n * m, h * w, gl])?)
        })?;
        if g.capturing() {
            g.capture("global_attention", &attn.probs.value().reshape(&[n, m, h, w, gh, gw])?);
        }
        let out = merge_heads(&attn.out, m)?.reshape(&[n, h, w, c])?;
        let branch = self.proj.forward(g, &out)?.drop_path(drop_path)?;
        Ok(z_l.add(&branch)?)
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>, drop_path: f64) -> Result<Var<'g, T>> {
        let local = self.local(g, x, drop_path)?;
        let q_l = self.fixup_query(g, &local.q, &local.v)?;
        self.global(g, &local.z, &q_l, drop_path)
    }
}

/// `[num_windows, m, R², R²]` with [`MASKED_LOGIT`] on padded keys.
fn padding_mask<T: Float>(geom: &WindowGeometry, heads: usize) -> Tensor<T> {
    let pad = geom.padding_mask();
    let area = geom.window_area();
    let mut data = Vec::with_capacity(pad.len() * heads * area);
    for keys in pad.chunks_exact(area) {
        for _ in 0..heads * area {
            data.extend(keys.iter().map(|&p| if p { MASKED_LOGIT } else { 0.0 }));
        }
    }
    Tensor::from_f64(&[geom.num_windows(), heads, area, area], &data).expect("mask extents match")
}
