use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Gradient accumulator, same shape as `value`.
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Named model parameters in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T> {
    entries: Vec<Parameter<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<usize> {
        if self.index_of(name).is_some() {
            return Err(Error::OutOfRange {
                what: "parameter name",
                value: name.to_string(),
                range: "names must be unique".to_string(),
            });
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Replace a value, keeping the recorded shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.value_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "parameter",
                "shape",
                format!("{name}: {:?} vs {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    #[inline]
    pub fn at(&self, index: usize) -> &Parameter<T> {
        &self.entries[index]
    }

    #[inline]
    pub(crate) fn at_mut(&mut self, index: usize) -> &mut Parameter<T> {
        &mut self.entries[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.entries.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.data_mut().fill(T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &ParamGrads<T>) {
        for (p, g) in self.entries.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }

    /// Order-sensitive fingerprint of all values, used to prove read-only access.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for p in &self.entries {
            for v in p.value.data() {
                h ^= v.as_f64().to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Gradients for each entry of a [`ParameterStore`], by position.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T>(pub Vec<Option<Tensor<T>>>);

impl<T: Scalar> ParamGrads<T> {
    pub fn empty(len: usize) -> Self {
        ParamGrads((0..len).map(|_| None).collect())
    }

    pub fn get(&self, index: usize) -> Option<&Tensor<T>> {
        self.0.get(index).and_then(Option::as_ref)
    }

    /// In-place sum; the caller controls summation order.
    pub fn add(&mut self, other: &ParamGrads<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }
}
