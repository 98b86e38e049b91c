use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dtype::Float;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Float> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers such as batch-norm running statistics are stored but not trained.
    pub trainable: bool,
}

/// Ordered, named collection of model tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Float> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(invalid("param", format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(crate::error::mismatch("param set", entry.value.shape(), value.shape()));
        }
        entry.value = value;
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Number of learnable scalars (buffers excluded).
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Normal(0, std) resampled until inside two standard deviations.
    TruncNormal {
        std: f64,
    },
    /// Kaiming-style normal with std = sqrt(2 / fan_in).
    KaimingNormal {
        fan_in: usize,
    },
}

/// Registers parameters under a hierarchical dotted name prefix.
pub struct ParamBuilder<T: Float> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
    zero_fill: bool,
}

impl<T: Float> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
            zero_fill: false,
        }
    }

    /// Builder that ignores init schemes and zero-fills every tensor. Cheap
    /// for structural inspection of large models: zeroed pages stay untouched.
    pub fn zero_filled() -> Self {
        Self {
            zero_fill: true,
            ..Self::new(0)
        }
    }

    /// Runs `f` with `name` pushed onto the prefix.
    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let value = self.sample(shape, init);
        let full = self.full_name(name);
        self.store
            .insert(&full, value, true)
            .unwrap_or_else(|e| panic!("model construction: {e}"))
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let value = self.sample(shape, init);
        let full = self.full_name(name);
        self.store
            .insert(&full, value, false)
            .unwrap_or_else(|e| panic!("model construction: {e}"))
    }

    fn sample(&mut self, shape: &[usize], init: Init) -> Tensor<T> {
        let numel: usize = shape.iter().product();
        if self.zero_fill {
            return Tensor::raw(shape.to_vec(), vec![T::zero(); numel]);
        }
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); numel],
            Init::Ones => vec![T::one(); numel],
            Init::Constant(v) => vec![T::from_f64(v); numel],
            Init::TruncNormal { std } => (0..numel)
                .map(|_| loop {
                    let z: f64 = self.rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        break T::from_f64(z * std);
                    }
                })
                .collect(),
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                (0..numel)
                    .map(|_| T::from_f64(self.rng.sample::<f64, _>(StandardNormal) * std))
                    .collect()
            }
        };
        Tensor::raw(shape.to_vec(), data)
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoped_names_and_counts() {
        let mut b = ParamBuilder::<f32>::new(0);
        let w = b.scope("enc", |b| {
            b.scope("fc", |b| b.param("weight", &[3, 4], Init::TruncNormal { std: 0.02 }))
        });
        b.buffer("running_mean", &[4], Init::Zeros);
        let store = b.finish();
        assert_eq!(store.entry(w).name, "enc.fc.weight");
        assert_eq!(store.num_trainable(), 12);
        assert_eq!(store.len(), 2);
        assert!(store.get(w).data().iter().all(|v| v.abs() <= 0.04 + 1e-7));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.insert("a", Tensor::zeros(&[1]), true).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[1]), true).is_err());
    }
}
