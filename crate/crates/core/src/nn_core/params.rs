//! Named parameter storage and graph binding.

use std::collections::{BTreeMap, HashMap};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use semcom_tensor::{Gradients, Graph, Real, Tensor, Var};

/// Model parameters keyed by module path (`"encoder.key.stage0.conv.w"`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: BTreeMap::new() }
    }

    /// Panics on duplicate names: two layers sharing a path is a wiring bug.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        assert!(!self.tensors.contains_key(&name), "duplicate parameter {name}");
        self.tensors.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

/// A forward pass in progress: a graph plus lazily bound parameters.
pub struct Ctx<'a, T: Real> {
    pub g: Graph<T>,
    params: &'a ParamStore<T>,
    bound: HashMap<String, Var>,
}

impl<'a, T: Real> Ctx<'a, T> {
    /// Tracks gradients for every parameter.
    pub fn train(params: &'a ParamStore<T>) -> Self {
        Ctx { g: Graph::new(), params, bound: HashMap::new() }
    }

    pub fn inference(params: &'a ParamStore<T>) -> Self {
        Ctx { g: Graph::inference(), params, bound: HashMap::new() }
    }

    /// The graph node for parameter `name`, created on first use so that a
    /// module applied twice shares its weights.
    pub fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = self.params.get(name).unwrap_or_else(|| panic!("parameter {name} missing from store")).clone();
        let v = self.g.leaf(value, true);
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.g.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.g.value(v)
    }

    /// Backpropagate `loss` and collect gradients of every bound parameter.
    /// Parameters that were never touched by the forward pass are absent.
    pub fn param_grads(&self, loss: Var) -> BTreeMap<String, Tensor<T>> {
        let mut grads: Gradients<T> = self.g.backward(loss);
        let mut out = BTreeMap::new();
        for (name, &v) in &self.bound {
            if let Some(t) = grads.take(v) {
                out.insert(name.clone(), t);
            }
        }
        out
    }
}

/// Gaussian draws with the given standard deviation.
pub(crate) fn normal_tensor<T: Real>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}

/// `softplus^{-1}(y) = ln(e^y - 1)`.
pub(crate) fn inverse_softplus(y: f64) -> f64 {
    if y > 20.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
