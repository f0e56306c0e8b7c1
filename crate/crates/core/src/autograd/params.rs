use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, PartialEq)]
struct Slot<T: Real> {
    value: Tensor<T>,
    grad: Tensor<T>,
}

/// Named trainable tensors with one gradient slot each.
///
/// Iteration order is lexicographic by name, which makes checkpoint bytes
/// and optimizer updates independent of insertion order.
#[derive(Clone, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    slots: BTreeMap<String, Slot<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            slots: BTreeMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros_like(&value);
        self.slots.insert(name, Slot { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    /// Mutable access to a parameter's values. The shape is fixed.
    pub fn values_mut(&mut self, name: &str) -> Result<&mut [T]> {
        self.slots
            .get_mut(name)
            .map(|s| s.value.data_mut())
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        self.slots
            .get(name)
            .map(|s| &s.grad)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut [T]> {
        self.slots
            .get_mut(name)
            .map(|s| s.grad.data_mut())
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, g: &Tensor<T>) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::Internal(format!("tape references unknown parameter `{name}`")))?;
        slot.grad.add_assign(g)
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    /// `(name, value, grad)` triples for optimizers.
    pub(crate) fn iter_update(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>, &Tensor<T>)> {
        self.slots
            .iter_mut()
            .map(|(k, s)| (k.as_str(), &mut s.value, &s.grad))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            slots: self
                .slots
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        Slot {
                            value: s.value.cast(),
                            grad: s.grad.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

impl<T: Real> std::fmt::Debug for ParamStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.slots.iter().map(|(k, s)| (k, s.value.shape())))
            .finish()
    }
}
