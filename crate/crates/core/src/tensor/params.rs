//! Named parameter collections.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{Elem, Gradients, Tensor};

/// Map of slash-separated parameter paths to tensors. Trainable parameters
/// all carry `requires_grad`; non-trainable state (batch-norm running
/// statistics) lives in the separate buffer map. BTree ordering makes every
/// iteration (optimizer, checkpoint, gradient collection) deterministic.
pub struct ParamSet<E: Elem = f32> {
    params: BTreeMap<String, Tensor<E>>,
    buffers: BTreeMap<String, Tensor<E>>,
}

impl<E: Elem> Default for ParamSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet { params: BTreeMap::new(), buffers: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<E>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.params.insert(name, t.with_grad());
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor<E>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.buffers.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.params.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<E>> {
        self.buffers.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replace an existing parameter (optimizer update). The new value is
    /// re-marked as a gradient leaf.
    pub fn set(&mut self, name: &str, t: Tensor<E>) -> Result<()> {
        match self.params.get_mut(name) {
            Some(slot) => {
                *slot = t.with_grad();
                Ok(())
            }
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn set_buffer(&mut self, name: &str, t: Tensor<E>) -> Result<()> {
        match self.buffers.get_mut(name) {
            Some(slot) => {
                *slot = t;
                Ok(())
            }
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.params.iter()
    }

    pub fn iter_buffers(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.buffers.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.buffers.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Gradients by parameter name; errors on the first parameter missing
    /// from `grads`.
    pub fn grads_by_name(&self, grads: &Gradients<E>) -> Result<BTreeMap<String, Tensor<E>>> {
        let mut out = BTreeMap::new();
        for (name, t) in &self.params {
            match grads.get(t) {
                Some(g) => {
                    out.insert(name.clone(), g.clone());
                }
                None => return Err(Error::MissingGrad(name.clone())),
            }
        }
        Ok(out)
    }

    pub fn cast<F: Elem>(&self) -> ParamSet<F> {
        let mut out = ParamSet::new();
        for (name, t) in &self.params {
            out.params.insert(name.clone(), t.cast::<F>().with_grad());
        }
        for (name, t) in &self.buffers {
            out.buffers.insert(name.clone(), t.cast::<F>());
        }
        out
    }
}
