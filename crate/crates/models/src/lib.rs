//! SETR and HLG segmentation models on top of `lgseg-tensor`.
//!
//! Models own only parameter handles; a [`lgseg_tensor::ParamStore`] holds the
//! values and a [`Graph`] snapshot of it is read during each forward pass.

pub mod attention;
pub mod config;
pub mod error;
pub mod hlg;
pub mod nn;
pub mod setr;

use lgseg_tensor::{Float, Graph, ParamBuilder, ParamStore, Var};

pub use config::{
    DecoderConfig, DecoderKind, GlobalBias, HlgConfig, HlgSegConfig, HlgVariant, SetrBackbone, SetrConfig,
    SetrEncoderConfig, StageConfig, WindowEmbedding,
};
pub use error::{ModelError, Result};
pub use hlg::{HlgBackbone, HlgClassifier, HlgSegmenter};
pub use setr::Setr;

/// Full-resolution logits `[N, H, W, K]` plus auxiliary-head logits of the same shape.
pub struct SegmentationOutput<'g, T: Float> {
    pub logits: Var<'g, T>,
    pub aux: Vec<Var<'g, T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegModelConfig {
    Setr(SetrConfig),
    Hlg(HlgConfig),
}

impl SegModelConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            Self::Setr(c) => c.decoder.num_classes,
            Self::Hlg(c) => c.seg.num_classes,
        }
    }
}

/// Any segmentation model.
#[derive(Debug, Clone)]
pub enum SegModel {
    Setr(Setr),
    Hlg(HlgSegmenter),
}

impl SegModel {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, cfg: &SegModelConfig) -> Result<Self> {
        Ok(match cfg {
            SegModelConfig::Setr(c) => Self::Setr(Setr::new(b, c)?),
            SegModelConfig::Hlg(c) => Self::Hlg(HlgSegmenter::new(b, c)?),
        })
    }

    pub fn build<T: Float>(cfg: &SegModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut b = ParamBuilder::new(seed);
        let model = Self::new(&mut b, cfg)?;
        Ok((model, b.finish()))
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, images: &Var<'g, T>) -> Result<SegmentationOutput<'g, T>> {
        match self {
            Self::Setr(m) => m.forward(g, images),
            Self::Hlg(m) => m.forward(g, images),
        }
    }
}
