use lgseg_tensor::{Float, Tensor};

use crate::data::IGNORE_INDEX;
use crate::error::{invalid, Result};

/// `K×K` pixel counts, rows indexed by ground truth and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    /// Adds a prediction/truth pair of masks; truth pixels equal to
    /// [`IGNORE_INDEX`] are skipped.
    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(invalid(format!(
                "{} predicted vs {} true pixels",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if t == IGNORE_INDEX {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= self.k || t >= self.k {
                return Err(invalid(format!("label {} >= num_classes {}", p.max(t), self.k)));
            }
            self.counts[t * self.k + p] += 1;
        }
        Ok(())
    }

    /// IoU per class; `None` for classes absent from both prediction and truth.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.count(c, c);
                let truth: u64 = (0..self.k).map(|p| self.count(c, p)).sum();
                let pred: u64 = (0..self.k).map(|t| self.count(t, c)).sum();
                let union = truth + pred - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over present classes; 0 when nothing was counted.
    pub fn mean_iou(&self) -> f64 {
        let present: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().sum();
        let correct: u64 = (0..self.k).map(|c| self.count(c, c)).sum();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

/// Per-class IoU and their mean for one mask pair.
pub fn miou(pred: &[u8], truth: &[u8], k: usize) -> Result<(Vec<Option<f64>>, f64)> {
    let mut cm = ConfusionMatrix::new(k);
    cm.add(pred, truth)?;
    Ok((cm.per_class_iou(), cm.mean_iou()))
}

/// Arg-max over the last axis; ties go to the lowest class.
pub fn argmax_labels<T: Float>(logits: &Tensor<T>) -> Vec<u8> {
    let k = *logits.shape().last().expect("class axis");
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}
