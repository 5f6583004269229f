//! Named parameter storage and initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Learnable in principle but currently held constant.
    Frozen,
    /// Running statistic, never differentiated.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
}

/// Flat, ordered collection of every tensor a model owns.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let tensor = tensor.with_requires_grad(kind == ParamKind::Trainable);
        self.entries.push(ParamEntry { name, tensor, kind });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    /// Switches one parameter between trainable and frozen. Buffers are
    /// left alone.
    pub fn set_kind(&mut self, id: ParamId, kind: ParamKind) {
        let e = &mut self.entries[id.0];
        if e.kind != ParamKind::Buffer && kind != ParamKind::Buffer {
            e.kind = kind;
            e.tensor.requires_grad = kind == ParamKind::Trainable;
        }
    }

    /// Marks every learnable tensor whose name starts with `prefix` as frozen
    /// (or trainable again). Buffers are left alone.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for e in &mut self.entries {
            if e.kind != ParamKind::Buffer && e.name.starts_with(prefix) {
                e.kind = if frozen {
                    ParamKind::Frozen
                } else {
                    ParamKind::Trainable
                };
                e.tensor.requires_grad = !frozen;
                n += 1;
            }
        }
        n
    }

    /// Number of scalar weights the optimizer updates.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|e| &mut e.tensor)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.grad = None;
        }
    }

    /// Stores gradients produced by a backward pass on the matching tensors.
    pub fn set_grads(&mut self, grads: Vec<(ParamId, Vec<T>)>) {
        for (id, g) in grads {
            let t = &mut self.entries[id.0].tensor;
            debug_assert_eq!(t.numel(), g.len());
            t.grad = Some(g);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    kind: e.kind,
                })
                .collect(),
        }
    }
}

/// Creates named, randomly initialized parameters under a dotted prefix.
pub struct ParamBuilder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Builder for a nested scope, `prefix.name`.
    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn tensor(&mut self, name: &str, tensor: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.add(full, tensor, kind)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], limit: f64) -> Result<ParamId> {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-limit..=limit)));
        self.tensor(name, t, ParamKind::Trainable)
    }

    /// Glorot/Xavier uniform, `limit = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<ParamId> {
        self.uniform(name, shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    /// He uniform, `limit = sqrt(6 / fan_in)`, for relu layers.
    pub fn he(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.uniform(name, shape, (6.0 / fan_in as f64).sqrt())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.tensor(name, Tensor::zeros(shape.to_vec()), ParamKind::Trainable)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.tensor(name, Tensor::ones(shape.to_vec()), ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        self.tensor(name, tensor, ParamKind::Buffer)
    }
}
