use lgseg_models::SegModel;
use lgseg_tensor::{Float, Graph, GraphOptions, ParamStore, TensorError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment, AugmentConfig};
use crate::data::{batch_images, batch_labels, Mask, SynthSegSample};
use crate::error::{invalid, HarnessError, Result};
use crate::infer::{forward_logits, sliding_window_infer};
use crate::log::{MetricsLog, Record};
use crate::loss::seg_loss;
use crate::metrics::{argmax_labels, ConfusionMatrix};
use crate::optim::{Optimizer, OptimizerKind, Schedule, TrainState};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecipe {
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub iters: usize,
    pub batch: usize,
    pub seed: u64,
    pub aux_weight: f64,
    pub augment: Option<AugmentConfig>,
    /// Write a loss record every this many steps (0 = final step only).
    pub log_every: usize,
    /// Evaluate on the training corpus every this many steps (0 = never).
    pub eval_every: usize,
}

impl TrainRecipe {
    /// Segmentation recipe: SGD with momentum under poly decay.
    pub fn sgd_poly(base_lr: f64, iters: usize, batch: usize, seed: u64) -> Self {
        Self {
            optimizer: OptimizerKind::sgd(),
            schedule: Schedule::poly(base_lr, iters),
            iters,
            batch,
            seed,
            aux_weight: crate::loss::AUX_WEIGHT,
            augment: None,
            log_every: 10,
            eval_every: 0,
        }
    }

    /// Classification-style recipe: AdamW under warmup plus cosine decay.
    pub fn adamw_cosine(base_lr: f64, warmup: usize, iters: usize, batch: usize, seed: u64) -> Self {
        Self {
            optimizer: OptimizerKind::adamw(),
            schedule: Schedule::WarmupCosine {
                base: base_lr,
                warmup,
                total: iters,
                floor: 0.0,
            },
            iters,
            batch,
            seed,
            aux_weight: crate::loss::AUX_WEIGHT,
            augment: None,
            log_every: 10,
            eval_every: 0,
        }
    }

    pub fn optimizer(&self) -> Optimizer {
        Optimizer::new(self.optimizer, self.schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 || self.batch == 0 {
            return Err(invalid("iters and batch must be positive"));
        }
        self.schedule.validate()
    }
}

/// Random stream for `step`: a pure function of `(seed, step)`, so a resumed
/// run only needs the step counter to continue bit-identically.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

/// Corpus indices of the batch at `step`: consecutive slices of a per-epoch
/// shuffle, epochs seeded independently.
pub fn batch_indices(seed: u64, step: usize, batch: usize, n: usize) -> Vec<usize> {
    let perm = |epoch: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d_e70c);
        rng.set_stream(epoch as u64);
        idx.shuffle(&mut rng);
        idx
    };
    let mut cached: Option<(usize, Vec<usize>)> = None;
    (step * batch..(step + 1) * batch)
        .map(|p| {
            let epoch = p / n;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, perm(epoch)));
            }
            cached.as_ref().expect("cached").1[p % n]
        })
        .collect()
}

/// A model, its corpus and the recipe driving it.
#[derive(Debug, Clone, Copy)]
pub struct Trainer<'a> {
    pub model: &'a SegModel,
    pub corpus: &'a [SynthSegSample],
    pub num_classes: usize,
    pub recipe: &'a TrainRecipe,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a SegModel, corpus: &'a [SynthSegSample], num_classes: usize, recipe: &'a TrainRecipe) -> Self {
        Self {
            model,
            corpus,
            num_classes,
            recipe,
        }
    }

    /// Runs from `state.step` until `stop_at` (capped at `recipe.iters`)
    /// completed steps, appending records to `log`.
    pub fn run<T: Float>(
        &self,
        store: &mut ParamStore<T>,
        state: &mut TrainState<T>,
        stop_at: usize,
        log: &mut MetricsLog,
    ) -> Result<()> {
        let Trainer {
            model,
            corpus,
            num_classes,
            recipe,
        } = *self;
        recipe.validate()?;
        if corpus.is_empty() {
            return Err(invalid("empty training corpus"));
        }
        let optimizer = recipe.optimizer();
        let end = stop_at.min(recipe.iters);
        while state.step < end {
            let step = state.step;
            let mut rng = step_rng(recipe.seed, step);
            let picked = batch_indices(recipe.seed, step, recipe.batch, corpus.len());
            let samples: Vec<SynthSegSample> = match &recipe.augment {
                Some(cfg) => picked
                    .iter()
                    .map(|&i| augment(&corpus[i], cfg, &mut rng))
                    .collect::<Result<_>>()?,
                None => picked.iter().map(|&i| corpus[i].clone()).collect(),
            };
            let refs: Vec<&SynthSegSample> = samples.iter().collect();
            let images = batch_images::<T>(&refs)?;
            let labels = batch_labels(&refs);

            let g = Graph::new(store, GraphOptions::train(rng.gen()));
            let loss = (|| -> Result<f64> {
                let x = g.constant(images);
                let out = model.forward(&g, &x)?;
                let loss = seg_loss(&out, &labels, recipe.aux_weight)?;
                g.backward(&loss)?;
                Ok(loss.value().item().as_f64())
            })()
            .map_err(|e| diverged(e, step))?;
            if !loss.is_finite() {
                return Err(HarnessError::Divergence { step, loss });
            }
            let grads = g.param_grads();
            for (id, value) in g.take_buffer_updates() {
                store.set(id, value)?;
            }
            drop(g);
            let lr = optimizer.step(state, store, &grads)?;

            let done = state.step;
            let is_last = done == recipe.iters;
            let log_now = is_last || (recipe.log_every > 0 && done.is_multiple_of(recipe.log_every));
            let eval_now = recipe.eval_every > 0 && (is_last || done.is_multiple_of(recipe.eval_every));
            if log_now || eval_now {
                let mut metrics = Vec::new();
                if eval_now {
                    let report = evaluate(model, store, corpus, num_classes, InferMode::Direct, recipe.batch)?;
                    metrics.push(("pixel_acc".to_string(), report.pixel_accuracy));
                    metrics.push(("miou".to_string(), report.mean_iou));
                }
                log.push(Record {
                    step: done,
                    loss,
                    lr,
                    metrics,
                })
                .map_err(|e| invalid(format!("writing metrics log: {e}")))?;
            }
        }
        Ok(())
    }
}

fn diverged(e: HarnessError, step: usize) -> HarnessError {
    let non_finite = matches!(
        e,
        HarnessError::Tensor(TensorError::NonFinite { .. })
            | HarnessError::Model(lgseg_models::ModelError::Tensor(TensorError::NonFinite { .. }))
    );
    if non_finite {
        HarnessError::Divergence { step, loss: f64::NAN }
    } else {
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferMode {
    Direct,
    Sliding {
        window: (usize, usize),
        stride: (usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
    pub per_class: Vec<Option<f64>>,
    pub predictions: Vec<Mask>,
}

/// Predicts every sample in eval mode and scores against its mask.
pub fn evaluate<T: Float>(
    model: &SegModel,
    store: &ParamStore<T>,
    corpus: &[SynthSegSample],
    num_classes: usize,
    mode: InferMode,
    batch: usize,
) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(num_classes);
    let mut predictions = Vec::with_capacity(corpus.len());
    for chunk in corpus.chunks(batch.max(1)) {
        let refs: Vec<&SynthSegSample> = chunk.iter().collect();
        let images = batch_images::<T>(&refs)?;
        let logits = match mode {
            InferMode::Direct => forward_logits(model, store, &images)?,
            InferMode::Sliding { window, stride } => {
                sliding_window_infer(&images, window, stride, |crop| forward_logits(model, store, crop))?
            }
        };
        let labels = argmax_labels(&logits);
        let per = labels.len() / chunk.len();
        for (s, pred) in chunk.iter().zip(labels.chunks(per)) {
            cm.add(pred, &s.mask.labels)?;
            predictions.push(Mask::new(s.height(), s.width(), pred.to_vec())?);
        }
    }
    Ok(EvalReport {
        pixel_accuracy: cm.pixel_accuracy(),
        mean_iou: cm.mean_iou(),
        per_class: cm.per_class_iou(),
        predictions,
    })
}
