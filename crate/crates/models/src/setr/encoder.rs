//! Patch sequentialization, position embeddings and pre-norm transformer layers.

use lgseg_tensor::{Conv2dSpec, Float, Graph, Init, ParamBuilder, ParamId, Var};

use crate::attention::{attend, merge_heads, split_heads};
use crate::config::SetrEncoderConfig;
use crate::error::{input_err, Result};
use crate::nn::{LayerNorm, Linear};

/// Tokens `[N, L, C]` with the `(h, w)` grid they were cut from.
#[derive(Clone)]
pub struct TokenSequence<'g, T: Float> {
    pub tokens: Var<'g, T>,
    pub grid: (usize, usize),
}

impl<'g, T: Float> TokenSequence<'g, T> {
    /// Row-major `[N, h, w, C]` view of the sequence.
    pub fn to_map(&self) -> Result<Var<'g, T>> {
        let s = self.tokens.shape();
        Ok(self.tokens.reshape(&[s[0], self.grid.0, self.grid.1, s[2]])?)
    }

    pub fn from_map(map: &Var<'g, T>) -> Result<Self> {
        let s = map.shape();
        Ok(Self {
            tokens: map.reshape(&[s[0], s[1] * s[2], s[3]])?,
            grid: (s[1], s[2]),
        })
    }
}

/// Pre-norm MSA and MLP blocks, each with a residual connection.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
}

impl TransformerLayer {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, c: usize, heads: usize, mlp_ratio: usize) -> Self {
        Self {
            ln1: LayerNorm::new(b, "ln1", c),
            qkv: Linear::new(b, "qkv", c, 3 * c, true),
            proj: Linear::new(b, "proj", c, c, true),
            ln2: LayerNorm::new(b, "ln2", c),
            fc1: Linear::new(b, "fc1", c, mlp_ratio * c, true),
            fc2: Linear::new(b, "fc2", mlp_ratio * c, c, true),
            heads,
        }
    }

    /// `z + MSA(LN(z))`, then `+ MLP(LN(·))`, on `[N, L, C]`.
    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, z: &Var<'g, T>) -> Result<Var<'g, T>> {
        let c = self.qkv.cin;
        let qkv = self.qkv.forward(g, &self.ln1.forward(g, z)?)?;
        let q = split_heads(&qkv.slice(2, 0, c)?, self.heads)?;
        let k = split_heads(&qkv.slice(2, c, c)?, self.heads)?;
        let v = split_heads(&qkv.slice(2, 2 * c, c)?, self.heads)?;
        let att = attend(&q, &k, &v, Ok)?;
        if g.capturing() {
            g.capture("attention", att.probs.value());
        }
        let z = z.add(&self.proj.forward(g, &merge_heads(&att.out, self.heads)?)?)?;
        let h = self.fc1.forward(g, &self.ln2.forward(g, &z)?)?.gelu()?;
        Ok(z.add(&self.fc2.forward(g, &h)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct SetrEncoder {
    pub cfg: SetrEncoderConfig,
    /// Flattened-patch projection `[P·P·3, C]`, patch pixels in `(row, col, channel)` order.
    pub patch_proj: ParamId,
    pub patch_bias: ParamId,
    /// Position table `[h·w, C]` at the native grid.
    pub positions: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub final_norm: Option<LayerNorm>,
}

impl SetrEncoder {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, cfg: &SetrEncoderConfig) -> Self {
        let (p, c) = (cfg.patch, cfg.hidden);
        let (gh, gw) = cfg.native_grid;
        Self {
            cfg: cfg.clone(),
            patch_proj: b.param("patch_embed.weight", &[p * p * 3, c], Init::TruncNormal { std: 0.02 }),
            patch_bias: b.param("patch_embed.bias", &[c], Init::Zeros),
            positions: b.param("pos_embed", &[gh * gw, c], Init::TruncNormal { std: 0.02 }),
            layers: (0..cfg.layers)
                .map(|i| {
                    b.scope(format!("layers.{i}"), |b| {
                        TransformerLayer::new(b, c, cfg.heads, cfg.mlp_ratio)
                    })
                })
                .collect(),
            final_norm: cfg.final_norm.then(|| LayerNorm::new(b, "final_norm", c)),
        }
    }

    /// Splits `[N, H, W, 3]` images into `P × P` patches in row-major order and
    /// projects each flattened patch to `C` channels.
    pub fn sequentialize<'g, T: Float>(&self, g: &'g Graph<T>, images: &Var<'g, T>) -> Result<TokenSequence<'g, T>> {
        let s = images.shape();
        let p = self.cfg.patch;
        if s.len() != 4 || s[3] != 3 || !s[1].is_multiple_of(p) || !s[2].is_multiple_of(p) || s[1] == 0 || s[2] == 0 {
            return Err(input_err(
                s,
                format!("expected [N, H, W, 3] with H, W divisible by {p}"),
            ));
        }
        let kernel = g.param(self.patch_proj).reshape(&[p, p, 3, self.cfg.hidden])?;
        let map = images
            .conv2d(&kernel, Conv2dSpec::new(p, 0, 1))?
            .add_bias(&g.param(self.patch_bias))?;
        TokenSequence::from_map(&map)
    }

    /// The position table resized to `grid` (bit-identical at the native grid).
    pub fn positions_at<'g, T: Float>(&self, g: &'g Graph<T>, grid: (usize, usize)) -> Result<Var<'g, T>> {
        interpolate_positions(&g.param(self.positions), self.cfg.native_grid, grid)
    }

    pub fn add_positions<'g, T: Float>(
        &self,
        g: &'g Graph<T>,
        seq: &TokenSequence<'g, T>,
    ) -> Result<TokenSequence<'g, T>> {
        let table = self.positions_at(g, seq.grid)?;
        Ok(TokenSequence {
            tokens: seq.tokens.add_bias(&table)?,
            grid: seq.grid,
        })
    }

    /// Outputs `Z^1 .. Z^{L_e}` of every layer (before any final norm).
    pub fn encode<'g, T: Float>(&self, g: &'g Graph<T>, images: &Var<'g, T>) -> Result<Vec<TokenSequence<'g, T>>> {
        let seq = self.add_positions(g, &self.sequentialize(g, images)?)?;
        let mut outs: Vec<TokenSequence<'g, T>> = Vec::with_capacity(self.layers.len());
        let mut z = seq.tokens;
        for layer in &self.layers {
            z = layer.forward(g, &z)?;
            outs.push(TokenSequence {
                tokens: z.clone(),
                grid: seq.grid,
            });
        }
        Ok(outs)
    }
}

/// Bilinear resize of a `[h·w, C]` table from `native` to `grid`.
pub fn interpolate_positions<'g, T: Float>(
    table: &Var<'g, T>,
    native: (usize, usize),
    grid: (usize, usize),
) -> Result<Var<'g, T>> {
    let c = table.shape()[1];
    if native == grid {
        return Ok(table.clone());
    }
    let map = table.reshape(&[1, native.0, native.1, c])?;
    Ok(map.bilinear_resize(grid.0, grid.1)?.reshape(&[grid.0 * grid.1, c])?)
}
