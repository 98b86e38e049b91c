//! SEgmentation TRansformer: a ViT-style encoder over 16×16 patches with
//! convolutional decoders back to full resolution.

pub mod decoders;
pub mod encoder;

use lgseg_tensor::{Float, Graph, ParamBuilder, ParamStore, Var};

use crate::config::SetrConfig;
use crate::error::Result;
use crate::SegmentationOutput;
pub use decoders::{AuxHead, Decoder, MlaHead, MlaStream, NaiveHead, PupHead};
pub use encoder::{interpolate_positions, SetrEncoder, TokenSequence, TransformerLayer};

#[derive(Debug, Clone)]
pub struct Setr {
    pub cfg: SetrConfig,
    pub encoder: SetrEncoder,
    pub decoder: Decoder,
    pub aux: Vec<AuxHead>,
}

impl Setr {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, cfg: &SetrConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.encoder.hidden;
        let encoder = b.scope("encoder", |b| SetrEncoder::new(b, &cfg.encoder));
        let decoder = Decoder::new(b, c, &cfg.decoder, cfg.encoder.patch);
        let aux = cfg
            .decoder
            .aux_taps
            .iter()
            .enumerate()
            .map(|(i, &t)| b.scope(format!("aux.{i}"), |b| AuxHead::new(b, t, c, &cfg.decoder)))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            decoder,
            aux,
        })
    }

    /// Builds the model with freshly initialized parameters.
    pub fn build<T: Float>(cfg: &SetrConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut b = ParamBuilder::new(seed);
        let model = Self::new(&mut b, cfg)?;
        Ok((model, b.finish()))
    }

    /// Encoder outputs with the final norm (if any) applied to the last one.
    pub fn features<'g, T: Float>(&self, g: &'g Graph<T>, images: &Var<'g, T>) -> Result<Vec<TokenSequence<'g, T>>> {
        let mut feats = self.encoder.encode(g, images)?;
        if let (Some(norm), Some(last)) = (&self.encoder.final_norm, feats.last_mut()) {
            last.tokens = norm.forward(g, &last.tokens)?;
        }
        Ok(feats)
    }

    /// Per-pixel logits `[N, H, W, K]` plus one map per auxiliary head.
    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, images: &Var<'g, T>) -> Result<SegmentationOutput<'g, T>> {
        let out = (images.shape()[1], images.shape()[2]);
        let feats = self.features(g, images)?;
        let logits = self.decoder.forward(g, &feats, &self.cfg.decoder.mla_taps, out)?;
        let mut aux = Vec::with_capacity(self.aux.len());
        for head in &self.aux {
            aux.push(head.forward(g, &feats[head.tap - 1].to_map()?, out)?);
        }
        Ok(SegmentationOutput { logits, aux })
    }
}
