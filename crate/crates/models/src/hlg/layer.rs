//! HLG sub-layers (DWMLP, local attention, global attention) and their plain/dilated pairing.

use lgseg_tensor::{Float, Graph, ParamBuilder, Var};

use crate::config::{GlobalBias, HlgConfig, WindowEmbedding};
use crate::error::Result;
use crate::hlg::attention::{AttentionShape, LocalGlobalAttention};
use crate::hlg::dwmlp::DwMlp;

/// Construction parameters of one sub-layer.
#[derive(Debug, Clone, Copy)]
pub struct SubLayerSpec {
    pub cin: usize,
    pub stride: usize,
    pub hidden: usize,
    pub squeeze: usize,
    pub attention: AttentionShape,
    pub embedding: WindowEmbedding,
    pub global_bias: GlobalBias,
    pub drop_path: f64,
}

impl SubLayerSpec {
    /// Defaults derived from `cfg` for a block entered with `cin` channels.
    pub fn from_config(cfg: &HlgConfig, cin: usize, stride: usize, attention: AttentionShape, drop_path: f64) -> Self {
        Self {
            cin,
            stride,
            hidden: cfg.mlp_hidden(attention.channels),
            squeeze: cfg.se_hidden(cin),
            attention,
            embedding: cfg.window_embedding,
            global_bias: cfg.global_bias,
            drop_path,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HlgSubLayer {
    pub mlp: DwMlp,
    pub attn: LocalGlobalAttention,
    pub drop_path: f64,
}

impl HlgSubLayer {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, spec: &SubLayerSpec) -> Self {
        let c = spec.attention.channels;
        Self {
            mlp: b.scope("mlp", |b| {
                DwMlp::new(b, spec.cin, c, spec.hidden, spec.squeeze, spec.stride)
            }),
            attn: b.scope("attn", |b| {
                LocalGlobalAttention::new(b, spec.attention, spec.embedding, spec.global_bias)
            }),
            drop_path: spec.drop_path,
        }
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let y = self.mlp.forward(g, x, self.drop_path)?;
        self.attn.forward(g, &y, self.drop_path)
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params() + self.attn.num_params()
    }
}

/// Plain sub-layer followed by a dilated one with the same window size.
#[derive(Debug, Clone)]
pub struct HlgLayerPair {
    pub plain: HlgSubLayer,
    pub dilated: HlgSubLayer,
}

impl HlgLayerPair {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, plain: &SubLayerSpec, dilated: &SubLayerSpec) -> Self {
        Self {
            plain: b.scope("plain", |b| HlgSubLayer::new(b, plain)),
            dilated: b.scope("dilated", |b| HlgSubLayer::new(b, dilated)),
        }
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.dilated.forward(g, &self.plain.forward(g, x)?)
    }

    pub fn num_params(&self) -> usize {
        self.plain.num_params() + self.dilated.num_params()
    }
}
