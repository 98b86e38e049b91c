//! Architecture descriptions and the named variants.

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SetrEncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub patch: usize,
    pub mlp_ratio: usize,
    /// Token grid the position table is stored at.
    pub native_grid: (usize, usize),
    /// Layer norm on the last encoder output before decoding.
    pub final_norm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Naive,
    Pup,
    Mla,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Naive => "naive",
            DecoderKind::Pup => "pup",
            DecoderKind::Mla => "mla",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub num_classes: usize,
    /// Width of every PUP conv stage.
    pub pup_channels: usize,
    /// MLA stream width after the lateral 1×1 conv.
    pub mla_channels: usize,
    /// MLA stream width after the last 3×3 conv.
    pub mla_out_channels: usize,
    /// 1-based encoder layers feeding the MLA streams, shallow to deep.
    pub mla_taps: Vec<usize>,
    /// Deeper streams are added into shallower ones.
    pub mla_top_down: bool,
    /// 1-based encoder layers feeding auxiliary heads.
    pub aux_taps: Vec<usize>,
    pub aux_channels: usize,
    pub aux_kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetrConfig {
    pub encoder: SetrEncoderConfig,
    pub decoder: DecoderConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetrBackbone {
    TBase,
    TLarge,
}

impl SetrBackbone {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "t-base" => Some(SetrBackbone::TBase),
            "t-large" => Some(SetrBackbone::TLarge),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SetrBackbone::TBase => "t-base",
            SetrBackbone::TLarge => "t-large",
        }
    }
}

/// Rescales a tap index defined for a 24-layer encoder to `layers`.
fn rescale_tap(t: usize, layers: usize) -> usize {
    ((t * layers + 12) / 24).clamp(1, layers)
}

impl SetrConfig {
    /// Named variants: 16-pixel patches, a 32×32 native token grid and 19 classes.
    pub fn named(kind: DecoderKind, backbone: SetrBackbone) -> Self {
        let (layers, hidden, heads) = match backbone {
            SetrBackbone::TBase => (12, 768, 12),
            SetrBackbone::TLarge => (24, 1024, 16),
        };
        let aux24: &[usize] = match kind {
            DecoderKind::Naive => &[10, 15, 20],
            DecoderKind::Pup => &[10, 15, 20, 24],
            DecoderKind::Mla => &[6, 12, 18, 24],
        };
        let taps = |ts: &[usize]| ts.iter().map(|&t| rescale_tap(t, layers)).collect::<Vec<_>>();
        SetrConfig {
            encoder: SetrEncoderConfig {
                layers,
                hidden,
                heads,
                patch: 16,
                mlp_ratio: 4,
                native_grid: (32, 32),
                final_norm: true,
            },
            decoder: DecoderConfig {
                kind,
                num_classes: 19,
                pup_channels: 256,
                mla_channels: 256,
                mla_out_channels: 128,
                mla_taps: (1..=4).map(|i| i * layers / 4).collect(),
                mla_top_down: true,
                aux_taps: taps(aux24),
                aux_channels: 256,
                aux_kernel: if kind == DecoderKind::Pup { 3 } else { 1 },
            },
        }
    }

    /// Desk-scale calibration model: 2 layers, width 64, 4 heads, 8-pixel patches on 64² images.
    pub fn toy(kind: DecoderKind, num_classes: usize) -> Self {
        SetrConfig {
            encoder: SetrEncoderConfig {
                layers: 2,
                hidden: 64,
                heads: 4,
                patch: 8,
                mlp_ratio: 4,
                native_grid: (8, 8),
                final_norm: true,
            },
            decoder: DecoderConfig {
                kind,
                num_classes,
                pup_channels: 32,
                mla_channels: 32,
                mla_out_channels: 16,
                mla_taps: vec![1, 2],
                mla_top_down: true,
                aux_taps: Vec::new(),
                aux_channels: 32,
                aux_kernel: 1,
            },
        }
    }

    /// Number of ×2 stages in the PUP head: `log2(patch)`.
    pub fn pup_stages(&self) -> usize {
        self.encoder.patch.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let d = &self.decoder;
        if e.layers == 0 || e.hidden == 0 || e.heads == 0 || e.patch == 0 || e.mlp_ratio == 0 {
            return Err(config_err("encoder extents must be positive"));
        }
        if !e.hidden.is_multiple_of(e.heads) {
            return Err(config_err(format!(
                "hidden {} not divisible by heads {}",
                e.hidden, e.heads
            )));
        }
        if e.native_grid.0 == 0 || e.native_grid.1 == 0 {
            return Err(config_err("native grid must be positive"));
        }
        if d.num_classes == 0 {
            return Err(config_err("num_classes must be positive"));
        }
        if d.kind == DecoderKind::Pup && !e.patch.is_power_of_two() {
            return Err(config_err(format!("PUP needs a power-of-two patch, got {}", e.patch)));
        }
        if d.kind == DecoderKind::Mla {
            if d.mla_taps.is_empty() {
                return Err(config_err("MLA needs at least one tap"));
            }
            if !e.patch.is_multiple_of(4) {
                return Err(config_err(format!("MLA needs a patch divisible by 4, got {}", e.patch)));
            }
        }
        let mla: &[usize] = if d.kind == DecoderKind::Mla { &d.mla_taps } else { &[] };
        for &t in mla.iter().chain(&d.aux_taps) {
            if t == 0 || t > e.layers {
                return Err(config_err(format!("tap Z^{t} outside [1, {}]", e.layers)));
            }
        }
        if d.aux_kernel.is_multiple_of(2) {
            return Err(config_err("aux kernel must be odd"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub dilation: usize,
    /// Number of sub-layers (two per HLG layer pair).
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowEmbedding {
    AvgPool,
    MaxPool,
    DwConv,
}

impl WindowEmbedding {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "avgpool" => Some(Self::AvgPool),
            "maxpool" => Some(Self::MaxPool),
            "dwconv" => Some(Self::DwConv),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AvgPool => "avgpool",
            Self::MaxPool => "maxpool",
            Self::DwConv => "dwconv",
        }
    }
}

/// How the global-attention bias is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalBias {
    /// Table over window offsets between a query's window and each key window.
    Relative,
    /// Full `[N_h·N_w, G]` table per head; only valid at the native grid.
    Dense,
}

impl GlobalBias {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relative" => Some(Self::Relative),
            "dense" => Some(Self::Dense),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Relative => "relative",
            Self::Dense => "dense",
        }
    }
}

/// Decoder used by the segmentation variant of the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct HlgSegConfig {
    pub num_classes: usize,
    pub window: usize,
    pub dilation: usize,
    pub pup_channels: usize,
    /// Image extent the decoder pair's global bias is sized for.
    pub native_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HlgConfig {
    pub name: String,
    pub stages: Vec<StageConfig>,
    pub mlp_ratio: f64,
    pub se_ratio: f64,
    pub se_min: usize,
    /// Image extent the relative tables are sized for.
    pub native_size: usize,
    pub drop_path: f64,
    pub num_classes: usize,
    pub window_embedding: WindowEmbedding,
    pub global_bias: GlobalBias,
    pub seg: HlgSegConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlgVariant {
    Mobile,
    Tiny,
    Small,
    Medium,
    Large,
}

impl HlgVariant {
    pub const ALL: [HlgVariant; 5] = [Self::Mobile, Self::Tiny, Self::Small, Self::Medium, Self::Large];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mobile => "hlg-mobile",
            Self::Tiny => "hlg-tiny",
            Self::Small => "hlg-small",
            Self::Medium => "hlg-medium",
            Self::Large => "hlg-large",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl HlgConfig {
    pub fn named(variant: HlgVariant) -> Self {
        use HlgVariant::*;
        let (channels, heads, depths, mlp_ratio) = match variant {
            Mobile => ([48, 96, 192, 384], [2, 4, 8, 16], [2, 2, 2, 2], 2.5),
            Tiny => ([64, 128, 256, 512], [2, 4, 8, 16], [2, 2, 6, 2], 3.0),
            Small => ([96, 192, 384, 768], [3, 6, 12, 24], [2, 2, 6, 2], 3.0),
            Medium => ([96, 192, 384, 768], [3, 6, 12, 24], [2, 2, 14, 2], 3.75),
            Large => ([128, 256, 512, 1024], [4, 8, 16, 32], [2, 2, 14, 2], 4.0),
        };
        let dilations = [8, 4, 2, 1];
        HlgConfig {
            name: variant.name().to_string(),
            stages: (0..4)
                .map(|i| StageConfig {
                    channels: channels[i],
                    heads: heads[i],
                    window: 7,
                    dilation: dilations[i],
                    depth: depths[i],
                })
                .collect(),
            mlp_ratio,
            se_ratio: 0.25,
            se_min: 8,
            native_size: 224,
            drop_path: if variant == Large { 0.3 } else { 0.1 },
            num_classes: 1000,
            window_embedding: WindowEmbedding::AvgPool,
            global_bias: GlobalBias::Relative,
            seg: HlgSegConfig {
                num_classes: 19,
                window: 8,
                dilation: 6,
                pup_channels: 256,
                native_size: 768,
            },
        }
    }

    /// Desk-scale calibration model for 64² images.
    pub fn toy(num_classes: usize) -> Self {
        let channels = [16, 32, 64, 128];
        let heads = [1, 2, 4, 8];
        let dilations = [4, 2, 1, 1];
        HlgConfig {
            name: "hlg-toy".to_string(),
            stages: (0..4)
                .map(|i| StageConfig {
                    channels: channels[i],
                    heads: heads[i],
                    window: 4,
                    dilation: dilations[i],
                    depth: 2,
                })
                .collect(),
            mlp_ratio: 2.0,
            se_ratio: 0.25,
            se_min: 8,
            native_size: 64,
            drop_path: 0.0,
            num_classes,
            window_embedding: WindowEmbedding::AvgPool,
            global_bias: GlobalBias::Relative,
            seg: HlgSegConfig {
                num_classes,
                window: 2,
                dilation: 2,
                pup_channels: 32,
                native_size: 64,
            },
        }
    }

    /// Hidden width of a DWMLP producing `cout` channels.
    pub fn mlp_hidden(&self, cout: usize) -> usize {
        (self.mlp_ratio * cout as f64) as usize
    }

    /// Squeeze width of the SE gate for a block entered with `cin` channels.
    pub fn se_hidden(&self, cin: usize) -> usize {
        ((self.se_ratio * cin as f64) as usize).max(self.se_min)
    }

    /// Total sub-layers across stages.
    pub fn total_depth(&self) -> usize {
        self.stages.iter().map(|s| s.depth).sum()
    }

    /// Drop-path rate of sub-layer `index`, linear from 0 to `drop_path`.
    pub fn drop_path_at(&self, index: usize) -> f64 {
        let n = self.total_depth();
        if n <= 1 {
            0.0
        } else {
            self.drop_path * index as f64 / (n - 1) as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != 4 {
            return Err(config_err(format!("expected 4 stages, got {}", self.stages.len())));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.heads == 0 || s.window == 0 || s.dilation == 0 || s.depth == 0 {
                return Err(config_err(format!("stage {}: extents must be positive", i + 1)));
            }
            if s.channels % s.heads != 0 {
                return Err(config_err(format!(
                    "stage {}: C={} not divisible by H={}",
                    i + 1,
                    s.channels,
                    s.heads
                )));
            }
        }
        if self.mlp_ratio <= 0.0 || self.se_ratio <= 0.0 {
            return Err(config_err("mlp and se ratios must be positive"));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return Err(config_err("drop_path must lie in [0, 1)"));
        }
        if self.native_size == 0 || self.num_classes == 0 || self.seg.num_classes == 0 {
            return Err(config_err("sizes and class counts must be positive"));
        }
        if self.seg.window == 0 || self.seg.dilation == 0 || self.seg.pup_channels == 0 {
            return Err(config_err("segmentation head extents must be positive"));
        }
        Ok(())
    }
}
