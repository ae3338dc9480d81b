use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{RanError, Result};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    /// Entries drawn from N(0, std^2).
    pub fn add_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) -> ParamId {
        let normal = Normal::new(0.0, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn add_full(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, T::lit(value)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replace every tensor, keeping names. Shapes must agree.
    pub fn replace_all(&mut self, tensors: Vec<Tensor<T>>) -> Result<()> {
        if tensors.len() != self.tensors.len()
            || tensors
                .iter()
                .zip(&self.tensors)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(RanError::dim("parameter set shape mismatch"));
        }
        self.tensors = tensors;
        Ok(())
    }
}
