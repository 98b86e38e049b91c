//! Naive, progressive-upsampling and multi-level-aggregation heads, plus
//! auxiliary heads on intermediate encoder layers.

use lgseg_tensor::{Float, Graph, ParamBuilder, Var};

use crate::config::{DecoderConfig, DecoderKind};
use crate::error::{input_err, Result};
use crate::nn::{upsample, Conv, ConvBn};
use crate::setr::encoder::TokenSequence;

/// `1×1 conv + BN + ReLU + 1×1 conv`, then one bilinear resize to full resolution.
#[derive(Debug, Clone)]
pub struct NaiveHead {
    pub hidden: ConvBn,
    pub classify: Conv,
}

impl NaiveHead {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, c: usize, k: usize) -> Self {
        Self {
            hidden: ConvBn::new(b, "hidden", c, c, 1, 1, true),
            classify: Conv::new(b, "classify", c, k, 1, 1, 1, true),
        }
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, map: &Var<'g, T>, out: (usize, usize)) -> Result<Var<'g, T>> {
        let y = self.classify.forward(g, &self.hidden.forward(g, map)?)?;
        Ok(y.bilinear_resize(out.0, out.1)?)
    }
}

/// Alternating `3×3 conv + BN + ReLU` and ×2 bilinear stages, then a 1×1 classifier.
#[derive(Debug, Clone)]
pub struct PupHead {
    pub stages: Vec<ConvBn>,
    pub classify: Conv,
}

impl PupHead {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, c: usize, width: usize, stages: usize, k: usize) -> Self {
        Self {
            stages: (0..stages)
                .map(|i| {
                    ConvBn::new(
                        b,
                        &format!("stages.{i}"),
                        if i == 0 { c } else { width },
                        width,
                        3,
                        1,
                        true,
                    )
                })
                .collect(),
            classify: Conv::new(b, "classify", width, k, 1, 1, 1, true),
        }
    }

    /// Feature maps after each upsampling stage, coarse to fine.
    pub fn forward_stages<'g, T: Float>(&self, g: &'g Graph<T>, map: &Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
        let mut x = map.clone();
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = upsample(&stage.forward(g, &x)?, 2)?;
            outs.push(x.clone());
        }
        Ok(outs)
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, map: &Var<'g, T>) -> Result<Var<'g, T>> {
        let last = self.forward_stages(g, map)?.pop().unwrap_or_else(|| map.clone());
        self.classify.forward(g, &last)
    }
}

#[derive(Debug, Clone)]
pub struct MlaStream {
    pub lateral: ConvBn,
    /// Extra 3×3 conv on streams that receive a top-down sum.
    pub fuse: Option<ConvBn>,
    pub conv_a: ConvBn,
    pub conv_b: ConvBn,
}

/// Multi-level aggregation over `M` encoder taps.
#[derive(Debug, Clone)]
pub struct MlaHead {
    pub streams: Vec<MlaStream>,
    pub classify: Conv,
    pub top_down: bool,
    pub stream_up: usize,
    pub final_up: usize,
}

impl MlaHead {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, c: usize, cfg: &DecoderConfig, patch: usize) -> Self {
        let (w, w_out, m) = (cfg.mla_channels, cfg.mla_out_channels, cfg.mla_taps.len());
        let streams = (0..m)
            .map(|i| {
                b.scope(format!("streams.{i}"), |b| MlaStream {
                    lateral: ConvBn::new(b, "lateral", c, w, 1, 1, true),
                    // the deepest stream (last) has nothing above it to add
                    fuse: (cfg.mla_top_down && i + 1 < m).then(|| ConvBn::new(b, "fuse", w, w, 3, 1, true)),
                    conv_a: ConvBn::new(b, "conv_a", w, w, 3, 1, true),
                    conv_b: ConvBn::new(b, "conv_b", w, w_out, 3, 1, true),
                })
            })
            .collect();
        Self {
            streams,
            classify: Conv::new(b, "classify", m * w_out, cfg.num_classes, 1, 1, 1, true),
            top_down: cfg.mla_top_down,
            stream_up: 4,
            final_up: patch / 4,
        }
    }

    /// Per-stream outputs (after the ×4 upsample) in tap order, shallow to deep.
    pub fn forward_streams<'g, T: Float>(&self, g: &'g Graph<T>, taps: &[Var<'g, T>]) -> Result<Vec<Var<'g, T>>> {
        if taps.len() != self.streams.len() {
            return Err(input_err(
                &[taps.len()],
                format!("MLA expects {} taps", self.streams.len()),
            ));
        }
        let mut laterals: Vec<Var<'g, T>> = Vec::with_capacity(taps.len());
        for (s, t) in self.streams.iter().zip(taps) {
            laterals.push(s.lateral.forward(g, t)?);
        }
        if self.top_down {
            for i in (0..laterals.len().saturating_sub(1)).rev() {
                laterals[i] = laterals[i].add(&laterals[i + 1])?;
            }
        }
        let mut outs = Vec::with_capacity(taps.len());
        for (s, x) in self.streams.iter().zip(laterals) {
            let x = match &s.fuse {
                Some(f) => f.forward(g, &x)?,
                None => x,
            };
            let x = s.conv_b.forward(g, &s.conv_a.forward(g, &x)?)?;
            outs.push(upsample(&x, self.stream_up)?);
        }
        Ok(outs)
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, taps: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let streams = self.forward_streams(g, taps)?;
        let cat = g.concat(&streams, 3)?;
        upsample(&self.classify.forward(g, &cat)?, self.final_up)
    }
}

/// Two-layer conv head on an intermediate layer, resized to full resolution.
#[derive(Debug, Clone)]
pub struct AuxHead {
    pub tap: usize,
    pub hidden: ConvBn,
    pub classify: Conv,
}

impl AuxHead {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, tap: usize, c: usize, cfg: &DecoderConfig) -> Self {
        Self {
            tap,
            hidden: ConvBn::new(b, "hidden", c, cfg.aux_channels, cfg.aux_kernel, 1, true),
            classify: Conv::new(b, "classify", cfg.aux_channels, cfg.num_classes, 1, 1, 1, true),
        }
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, map: &Var<'g, T>, out: (usize, usize)) -> Result<Var<'g, T>> {
        let y = self.classify.forward(g, &self.hidden.forward(g, map)?)?;
        Ok(y.bilinear_resize(out.0, out.1)?)
    }
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Naive(NaiveHead),
    Pup(PupHead),
    Mla(MlaHead),
}

impl Decoder {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, c: usize, cfg: &DecoderConfig, patch: usize) -> Self {
        let k = cfg.num_classes;
        b.scope("decoder", |b| match cfg.kind {
            DecoderKind::Naive => Decoder::Naive(NaiveHead::new(b, c, k)),
            DecoderKind::Pup => Decoder::Pup(PupHead::new(b, c, cfg.pup_channels, patch.trailing_zeros() as usize, k)),
            DecoderKind::Mla => Decoder::Mla(MlaHead::new(b, c, cfg, patch)),
        })
    }

    /// `features` holds `Z^1 .. Z^{L_e}`; `taps` are 1-based MLA layers.
    pub fn forward<'g, T: Float>(
        &self,
        g: &'g Graph<T>,
        features: &[TokenSequence<'g, T>],
        taps: &[usize],
        out: (usize, usize),
    ) -> Result<Var<'g, T>> {
        let last = features.last().ok_or_else(|| input_err(&[0], "no encoder features"))?;
        match self {
            Decoder::Naive(h) => h.forward(g, &last.to_map()?, out),
            Decoder::Pup(h) => h.forward(g, &last.to_map()?),
            Decoder::Mla(h) => {
                let maps = taps
                    .iter()
                    .map(|&t| features[t - 1].to_map())
                    .collect::<Result<Vec<_>>>()?;
                h.forward(g, &maps)
            }
        }
    }
}
