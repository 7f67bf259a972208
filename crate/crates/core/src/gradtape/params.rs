use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which side of the alternating update a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Forward-map parameters (the model).
    Forward,
    /// Backward-map parameters (the amortized inverse maps).
    Backward,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
    /// Held fixed by the optimizer; bound on the tape as a constant.
    pub frozen: bool,
}

/// Named parameter tensors owned by one trainer.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            group,
            value: value.detach(),
            frozen: false,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.params[self.id(name)?].value)
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name)?;
        if self.params[id].value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "param_set",
                detail: format!("{name}: {:?} vs {:?}", self.params[id].value.shape(), value.shape()),
            });
        }
        self.params[id].value = value.detach();
        Ok(())
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        let id = self.id(name)?;
        self.params[id].frozen = true;
        Ok(())
    }

    pub fn param(&self, id: usize) -> &Param<T> {
        &self.params[id]
    }

    pub(crate) fn value_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.params[id].value
    }

    /// Ids of trainable parameters in `group`.
    pub fn trainable(&self, group: ParamGroup) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.group == group && !p.frozen)
            .map(|(i, _)| i)
            .collect()
    }

    /// Records every parameter on `tape`; frozen ones stay constants.
    pub fn bind<'a>(&'a self, tape: &Tape<T>) -> Bound<'a, T> {
        let tensors = self
            .params
            .iter()
            .map(|p| if p.frozen { p.value.clone() } else { tape.param(&p.value) })
            .collect();
        Bound { store: self, tensors }
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
    }

    /// Flattened copy of every value, in insertion order.
    pub fn snapshot(&self) -> Vec<(String, Vec<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.data().to_vec()))
            .collect()
    }
}

/// A parameter store recorded on one tape.
pub struct Bound<'a, T> {
    store: &'a ParamStore<T>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Bound<'_, T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.tensors[self.store.id(name)?])
    }

    pub fn by_id(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    /// Gradient per parameter id for the given group (zeros where unreachable).
    pub fn grads_for(&self, grads: &Gradients<T>, ids: &[usize]) -> Vec<Tensor<T>> {
        ids.iter()
            .map(|&i| {
                grads
                    .get(&self.tensors[i])
                    .unwrap_or_else(|| Tensor::zeros(self.tensors[i].shape().to_vec()))
            })
            .collect()
    }
}
