use crate::dtype::Float;
use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::ops::activation::softmax_data;
use crate::tensor::Tensor;

impl<'g, T: Float> Var<'g, T> {
    /// Mean softmax cross-entropy of `[P, K]` logits against `P` labels.
    /// Rows labelled `ignore_index` contribute neither loss nor gradient.
    pub fn cross_entropy(&self, labels: &[usize], ignore_index: Option<usize>) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(invalid(
                "cross_entropy",
                format!("logits {shape:?} vs {} labels", labels.len()),
            ));
        }
        let (p, k) = (shape[0], shape[1]);
        let is_ignored = move |l: usize| ignore_index == Some(l);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k && !is_ignored(l)) {
            return Err(invalid("cross_entropy", format!("label {bad} >= num_classes {k}")));
        }
        let probs = softmax_data(self.value().data(), p, k, 1);
        let counted = labels.iter().filter(|&&l| !is_ignored(l)).count();
        let mut loss = 0.0f64;
        for (r, &l) in labels.iter().enumerate() {
            if !is_ignored(l) {
                // log-softmax directly for accuracy at saturated logits
                let row = &self.value().data()[r * k..(r + 1) * k];
                let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
                let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
                loss += lse - row[l].as_f64();
            }
        }
        let denom = counted.max(1) as f64;
        let out = Tensor::scalar(T::from_f64(loss / denom));
        let labels = labels.to_vec();
        self.graph().record("cross_entropy", out, &[self], move |g, _| {
            let scale = g.item() / T::from_f64(denom);
            let mut d = probs.clone();
            for (r, &l) in labels.iter().enumerate() {
                let row = &mut d[r * k..(r + 1) * k];
                if is_ignored(l) {
                    row.fill(T::zero());
                } else {
                    row[l] -= T::one();
                    row.iter_mut().for_each(|v| *v *= scale);
                }
            }
            vec![Some(Tensor::raw(vec![p, k], d))]
        })
    }
}
