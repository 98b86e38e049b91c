//! Desk-scale training and evaluation for the lgseg segmentation models.
//!
//! A [`synth_seg_dataset`] corpus stands in for real imagery; a
//! [`Trainer`] drives a [`SegModel`](lgseg_models::SegModel) with the segmentation
//! (SGD + poly) or classification (AdamW + warmup cosine) recipe and emits
//! `key=value` metric lines.
//!
//! ```
//! use lgseg_harness::{miou, Schedule};
//!
//! let (_, mean) = miou(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
//! assert!((mean - (2.0 / 3.0 + 1.0 / 2.0) / 2.0).abs() < 1e-12);
//! assert_eq!(Schedule::poly(0.01, 100).lr(100), 0.0);
//! ```

pub mod augment;
pub mod data;
pub mod error;
pub mod infer;
pub mod log;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod train;

pub use augment::{augment, crop, hflip, resize, AugmentConfig};
pub use data::{
    batch_images, batch_labels, palette, synth_sample, synth_seg_dataset, Mask, SynthSegSample, IGNORE_INDEX,
};
pub use error::{HarnessError, Result};
pub use infer::{forward_logits, sliding_window_infer};
pub use log::{parse_log, MetricsLog, Record};
pub use loss::{seg_loss, AUX_WEIGHT};
pub use metrics::{argmax_labels, miou, ConfusionMatrix};
pub use optim::{Optimizer, OptimizerKind, Schedule, TrainState};
pub use train::{batch_indices, evaluate, step_rng, EvalReport, InferMode, TrainRecipe, Trainer};
