//! Hierarchical Local-Global transformer.

pub mod attention;
pub mod backbone;
pub mod dwmlp;
pub mod layer;
pub mod window;

pub use attention::{AttentionShape, GlobalBiasTable, LocalGlobalAttention, LocalOutput, OffsetAxis, WindowEmbedder};
pub use backbone::{halve, HlgBackbone, HlgClassifier, HlgSegmenter, HlgStage, SEG_STRIDE};
pub use dwmlp::{DwMlp, SqueezeExcite};
pub use layer::{HlgLayerPair, HlgSubLayer, SubLayerSpec};
pub use window::{WindowGeometry, WindowPartition};
