//! Four-stage HLG backbone with classification and segmentation heads.

use lgseg_tensor::{Float, Graph, ParamBuilder, ParamStore, Var};

use crate::config::HlgConfig;
use crate::error::{input_err, Result};
use crate::hlg::attention::AttentionShape;
use crate::hlg::layer::{HlgLayerPair, HlgSubLayer, SubLayerSpec};
use crate::nn::{ConvBn, LayerNorm, Linear};
use crate::setr::PupHead;
use crate::SegmentationOutput;

/// `ceil(n / 2^times)`, the extent after `times` stride-2 reductions.
pub fn halve(n: usize, times: u32) -> usize {
    (0..times).fold(n, |n, _| n.div_ceil(2))
}

#[derive(Debug, Clone)]
pub struct HlgStage {
    /// Alternating plain (`D = 1`) and dilated sub-layers.
    pub layers: Vec<HlgSubLayer>,
}

impl HlgStage {
    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let mut x = x.clone();
        for layer in &self.layers {
            x = layer.forward(g, &x)?;
        }
        Ok(x)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(HlgSubLayer::num_params).sum()
    }
}

#[derive(Debug, Clone)]
pub struct HlgBackbone {
    pub cfg: HlgConfig,
    pub stem: Vec<ConvBn>,
    pub stages: Vec<HlgStage>,
}

impl HlgBackbone {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, cfg: &HlgConfig) -> Result<Self> {
        cfg.validate()?;
        let c1 = cfg.stages[0].channels;
        let stem = b.scope("stem", |b| {
            vec![
                ConvBn::new(b, "0", 3, c1, 3, 2, true),
                ConvBn::new(b, "1", c1, c1, 1, 1, true),
                ConvBn::new(b, "2", c1, c1, 3, 2, false),
            ]
        });
        let mut cin = c1;
        let mut index = 0;
        let mut stages = Vec::with_capacity(4);
        for (i, st) in cfg.stages.iter().enumerate() {
            let native = halve(cfg.native_size, 2 + i as u32);
            let layers = b.scope(format!("stages.{i}"), |b| {
                (0..st.depth)
                    .map(|j| {
                        let attention = AttentionShape {
                            channels: st.channels,
                            heads: st.heads,
                            window: st.window,
                            dilation: if j % 2 == 1 { st.dilation } else { 1 },
                            native_grid: (native, native),
                        };
                        let stride = if i > 0 && j == 0 { 2 } else { 1 };
                        let spec = SubLayerSpec::from_config(cfg, cin, stride, attention, cfg.drop_path_at(index));
                        cin = st.channels;
                        index += 1;
                        b.scope(j.to_string(), |b| HlgSubLayer::new(b, &spec))
                    })
                    .collect()
            });
            stages.push(HlgStage { layers });
        }
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            stages,
        })
    }

    /// Stage outputs at strides 4, 8, 16 and 32.
    pub fn forward_features<'g, T: Float>(&self, g: &'g Graph<T>, images: &Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
        let s = images.shape();
        if s.len() != 4 || s[3] != 3 || s[1] == 0 || s[2] == 0 {
            return Err(input_err(s, "expected images [N, H, W, 3]"));
        }
        let mut x = images.clone();
        for conv in &self.stem {
            x = conv.forward(g, &x)?;
        }
        let mut feats = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = stage.forward(g, &x)?;
            feats.push(x.clone());
        }
        Ok(feats)
    }

    pub fn num_params(&self) -> usize {
        self.stem.iter().map(ConvBn::num_params).sum::<usize>()
            + self.stages.iter().map(HlgStage::num_params).sum::<usize>()
    }
}

/// Backbone + LayerNorm + global average pool + linear classifier.
#[derive(Debug, Clone)]
pub struct HlgClassifier {
    pub backbone: HlgBackbone,
    pub norm: LayerNorm,
    pub head: Linear,
}

impl HlgClassifier {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, cfg: &HlgConfig) -> Result<Self> {
        let backbone = b.scope("backbone", |b| HlgBackbone::new(b, cfg))?;
        let c = cfg.stages[3].channels;
        Ok(Self {
            backbone,
            norm: LayerNorm::new(b, "head.norm", c),
            head: Linear::new(b, "head.fc", c, cfg.num_classes, true),
        })
    }

    pub fn build<T: Float>(cfg: &HlgConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut b = ParamBuilder::new(seed);
        let model = Self::new(&mut b, cfg)?;
        Ok((model, b.finish()))
    }

    /// Class logits `[N, K]`.
    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, images: &Var<'g, T>) -> Result<Var<'g, T>> {
        let feats = self.backbone.forward_features(g, images)?;
        self.classify_features(g, &feats[3])
    }

    /// Head alone on a final-stage map `[N, h, w, C_4]`.
    pub fn classify_features<'g, T: Float>(&self, g: &'g Graph<T>, feat: &Var<'g, T>) -> Result<Var<'g, T>> {
        let x = self.norm.forward(g, feat)?.global_avg_pool()?;
        self.head.forward(g, &x)
    }

    pub fn num_params(&self) -> usize {
        self.backbone.num_params() + 2 * self.norm.c + self.head.num_params()
    }
}

/// Stage maps resized to stride 16, concatenated, fused to `C_3` channels,
/// refined by one HLG pair and decoded by progressive upsampling.
#[derive(Debug, Clone)]
pub struct HlgSegmenter {
    pub backbone: HlgBackbone,
    pub fuse: Linear,
    pub pair: HlgLayerPair,
    pub pup: PupHead,
}

/// Output stride of the fused map the segmentation head decodes.
pub const SEG_STRIDE: usize = 16;

impl HlgSegmenter {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, cfg: &HlgConfig) -> Result<Self> {
        let backbone = b.scope("backbone", |b| HlgBackbone::new(b, cfg))?;
        let st = &cfg.stages[2];
        let total: usize = cfg.stages.iter().map(|s| s.channels).sum();
        let native = halve(cfg.seg.native_size, 4);
        let spec = |dilation| {
            let attention = AttentionShape {
                channels: st.channels,
                heads: st.heads,
                window: cfg.seg.window,
                dilation,
                native_grid: (native, native),
            };
            SubLayerSpec::from_config(cfg, st.channels, 1, attention, 0.0)
        };
        let (plain, dilated) = (spec(1), spec(cfg.seg.dilation));
        let stages = SEG_STRIDE.trailing_zeros() as usize;
        Ok(Self {
            backbone,
            fuse: Linear::new(b, "decoder.fuse", total, st.channels, true),
            pair: b.scope("decoder.pair", |b| HlgLayerPair::new(b, &plain, &dilated)),
            pup: b.scope("decoder.pup", |b| {
                PupHead::new(b, st.channels, cfg.seg.pup_channels, stages, cfg.seg.num_classes)
            }),
        })
    }

    pub fn build<T: Float>(cfg: &HlgConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut b = ParamBuilder::new(seed);
        let model = Self::new(&mut b, cfg)?;
        Ok((model, b.finish()))
    }

    /// Fused stride-16 map `[N, ⌈H/16⌉, ⌈W/16⌉, C_3]` before the HLG pair.
    pub fn fused<'g, T: Float>(&self, g: &'g Graph<T>, images: &Var<'g, T>) -> Result<Var<'g, T>> {
        let feats = self.backbone.forward_features(g, images)?;
        let (h, w) = (feats[2].shape()[1], feats[2].shape()[2]);
        let resized = feats
            .iter()
            .map(|f| f.bilinear_resize(h, w))
            .collect::<lgseg_tensor::Result<Vec<_>>>()?;
        self.fuse.forward(g, &g.concat(&resized, 3)?)
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, images: &Var<'g, T>) -> Result<SegmentationOutput<'g, T>> {
        let (h, w) = (images.shape()[1], images.shape()[2]);
        let x = self.pair.forward(g, &self.fused(g, images)?)?;
        let logits = self.pup.forward(g, &x)?.bilinear_resize(h, w)?;
        Ok(SegmentationOutput {
            logits,
            aux: Vec::new(),
        })
    }
}
