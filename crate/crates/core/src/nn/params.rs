use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

/// Named trainable tensors of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let len: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Const(v) => vec![lit(v); len],
            Init::Uniform(bound) => (0..len).map(|_| lit(rng.gen_range(-bound..=bound))).collect(),
        };
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(Tensor::from_vec(shape, data));
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    bufs: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self { bufs: store.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect() }
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn scale(&mut self, s: T) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bufs.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.bufs[id.0]
    }

    pub(crate) fn buf_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.bufs[id.0]
    }

    pub(crate) fn bufs(&self) -> &[Vec<T>] {
        &self.bufs
    }
}
