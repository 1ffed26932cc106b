use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitInfo {
    pub scheme: String,
    pub seed: u64,
}

/// Named trainable tensors with matching gradient buffers.
#[derive(Debug, Clone)]
pub struct ParameterStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
    init: InitInfo,
}

impl<T: Real> ParameterStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
            init: InitInfo {
                scheme: "uniform(+-1/sqrt(fan_in)), zero bias".into(),
                seed,
            },
        }
    }

    pub fn init_info(&self) -> &InitInfo {
        &self.init
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    /// `[fan_in, fan_out]` weight drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data))
    }

    pub fn bias(&mut self, name: &str, len: usize) -> ParamId {
        self.insert(name, Tensor::zeros(&[len]))
    }

    /// Lookup table; a one-hot lookup has a single active input, so rows
    /// are drawn from `U(-1, 1)`.
    pub fn embedding(&mut self, name: &str, rows: usize, dim: usize, rng: &mut RngStream) -> ParamId {
        let data = (0..rows * dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        self.insert(name, Tensor::matrix(rows, dim, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: Vec<Option<Tensor<T>>>) {
        for (slot, g) in self.grads.iter_mut().zip(grads) {
            if let Some(g) = g {
                slot.add_assign(&g);
            }
        }
    }

    /// Values and gradients as mutable pairs, for optimizers.
    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor<T>, &mut Tensor<T>)> {
        self.values.iter_mut().zip(self.grads.iter_mut())
    }

    /// Replace values from a name-keyed list, checking names and shapes.
    pub fn load_values(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<(), NnError> {
        if named.len() != self.values.len() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameters, found {}",
                self.values.len(),
                named.len()
            )));
        }
        for (name, t) in named {
            let id = self
                .id(&name)
                .ok_or_else(|| NnError::ShapeMismatch(format!("unknown parameter {name}")))?;
            if t.shape() != self.values[id.0].shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "{name}: expected {:?}, found {:?}",
                    self.values[id.0].shape(),
                    t.shape()
                )));
            }
            self.values[id.0] = t;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
            init: self.init.clone(),
        }
    }
}

/// Lazily materialises parameters as tape leaves, once per forward pass.
pub struct Binding<'a, T: Real> {
    store: &'a ParameterStore<T>,
    vars: RefCell<Vec<Option<Var>>>,
    trainable: bool,
}

impl<'a, T: Real> Binding<'a, T> {
    pub fn new(store: &'a ParameterStore<T>, trainable: bool) -> Self {
        Self {
            store,
            vars: RefCell::new(vec![None; store.len()]),
            trainable,
        }
    }

    pub fn frozen(store: &'a ParameterStore<T>) -> Self {
        Self::new(store, false)
    }

    pub fn store(&self) -> &'a ParameterStore<T> {
        self.store
    }

    pub fn var(&self, tape: &mut Tape<'a, T>, id: ParamId) -> Var {
        let mut vars = self.vars.borrow_mut();
        *vars[id.0].get_or_insert_with(|| tape.param(self.store.get(id), self.trainable))
    }

    /// Gradients for every parameter that took part in the pass.
    pub fn gradients(&self, tape: &Tape<'a, T>) -> Vec<Option<Tensor<T>>> {
        self.vars
            .borrow()
            .iter()
            .map(|v| v.and_then(|v| tape.grad(v).cloned()))
            .collect()
    }
}
