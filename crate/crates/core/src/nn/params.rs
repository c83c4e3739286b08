use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::Var;
use crate::error::{shape_mismatch, Result};
use crate::tensor::{Element, Tensor};

/// Handle to one tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, owned by one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Element> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let old = &self.values[id.0];
        if old.shape() != value.shape() {
            return Err(shape_mismatch("ParamStore::set", old.shape(), value.shape()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Leaves for one forward pass. With `trainable == false` nothing is
    /// recorded, which is the inference mode.
    pub fn leaves(&self, trainable: bool) -> Params<T> {
        Params {
            vars: self.values.iter().map(|v| Var::leaf(v.clone(), trainable)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn map_values(&mut self, mut f: impl FnMut(&str, &Tensor<T>) -> Tensor<T>) {
        for (name, v) in self.names.iter().zip(self.values.iter_mut()) {
            *v = f(name, v);
        }
    }
}

/// Graph leaves standing for every tensor of a [`ParamStore`].
pub struct Params<T: Element> {
    vars: Vec<Var<T>>,
}

impl<T: Element> Params<T> {
    /// Leaves in store order, for callers that build their own.
    pub fn from_vars(vars: Vec<Var<T>>) -> Self {
        Params { vars }
    }

    pub fn get(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

/// `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`.
pub fn uniform_fan_in<T: Element>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

pub fn normal<T: Element>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}
