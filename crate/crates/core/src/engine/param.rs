use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::real::Real;

/// A named learnable array with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Vec<T>,
    pub learnable: bool,
}

impl<T: Real> ParamTensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![T::zero(); n],
            grad: vec![T::zero(); n],
            learnable: true,
        }
    }

    pub fn from_values(name: impl Into<String>, shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "tensor `{name}`: shape {shape:?} holds {n} elements, got {}",
                values.len()
            )));
        }
        Ok(Self {
            grad: vec![T::zero(); n],
            name,
            shape,
            values,
            learnable: true,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Which store a tensor lives in. Shared tensors are reused across signals
/// in joint training; local tensors belong to one signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Shared,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamRef {
    pub slot: Slot,
    pub index: usize,
}

/// An ordered collection of tensors addressable by index or name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: Vec<ParamTensor<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Adds a tensor and returns its index. Names must be unique.
    pub fn insert(&mut self, tensor: ParamTensor<T>) -> Result<usize> {
        if self.by_name.contains_key(&tensor.name) {
            return Err(Error::InvalidModel(format!("duplicate tensor name `{}`", tensor.name)));
        }
        let idx = self.tensors.len();
        self.by_name.insert(tensor.name.clone(), idx);
        self.tensors.push(tensor);
        Ok(idx)
    }

    pub fn get(&self, index: usize) -> &ParamTensor<T> {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut ParamTensor<T> {
        &mut self.tensors[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.by_name.get(name).map(|&i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        match self.by_name.get(name) {
            Some(&i) => Some(&mut self.tensors[i]),
            None => None,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.tensors.iter_mut()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn set_learnable(&mut self, learnable: bool) {
        for t in &mut self.tensors {
            t.learnable = learnable;
        }
    }
}

/// Clears every gradient buffer, learnable or not.
pub fn zero_grads<T: Real>(store: &mut ParamStore<T>) {
    for t in store.iter_mut() {
        t.zero_grad();
    }
}

/// Read access to the pair of stores a model evaluates against.
#[derive(Clone, Copy)]
pub struct Params<'a, T> {
    pub shared: &'a ParamStore<T>,
    pub local: &'a ParamStore<T>,
}

impl<'a, T: Real> Params<'a, T> {
    pub fn get(&self, r: ParamRef) -> &'a ParamTensor<T> {
        match r.slot {
            Slot::Shared => self.shared.get(r.index),
            Slot::Local => self.local.get(r.index),
        }
    }
}

/// Mutable counterpart of [`Params`], used to deposit gradients.
pub struct ParamsMut<'a, T> {
    pub shared: &'a mut ParamStore<T>,
    pub local: &'a mut ParamStore<T>,
}

impl<'a, T: Real> ParamsMut<'a, T> {
    pub fn get(&self, r: ParamRef) -> &ParamTensor<T> {
        match r.slot {
            Slot::Shared => self.shared.get(r.index),
            Slot::Local => self.local.get(r.index),
        }
    }

    pub fn get_mut(&mut self, r: ParamRef) -> &mut ParamTensor<T> {
        match r.slot {
            Slot::Shared => self.shared.get_mut(r.index),
            Slot::Local => self.local.get_mut(r.index),
        }
    }

    pub fn reborrow(&self) -> Params<'_, T> {
        Params {
            shared: self.shared,
            local: self.local,
        }
    }
}

/// Parameters of a single fitted signal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldParams<T> {
    pub shared: ParamStore<T>,
    pub local: ParamStore<T>,
}

impl<T: Real> FieldParams<T> {
    pub fn view(&self) -> Params<'_, T> {
        Params {
            shared: &self.shared,
            local: &self.local,
        }
    }

    pub fn view_mut(&mut self) -> ParamsMut<'_, T> {
        ParamsMut {
            shared: &mut self.shared,
            local: &mut self.local,
        }
    }

    pub fn zero_grads(&mut self) {
        zero_grads(&mut self.shared);
        zero_grads(&mut self.local);
    }

    pub fn element_count(&self) -> usize {
        self.shared.element_count() + self.local.element_count()
    }

    /// All tensors from both stores, sorted by name.
    pub fn sorted_tensors(&self) -> Vec<&ParamTensor<T>> {
        let mut v: Vec<_> = self.shared.iter().chain(self.local.iter()).collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.shared.by_name(name).or_else(|| self.local.by_name(name))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        if self.shared.index_of(name).is_some() {
            self.shared.by_name_mut(name)
        } else {
            self.local.by_name_mut(name)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_clears_all_tensors() {
        let mut store = ParamStore::<f64>::new();
        let mut a = ParamTensor::zeros("a", vec![2]);
        a.grad = vec![0.3, -1.2];
        let mut b = ParamTensor::zeros("b", vec![1]);
        b.grad = vec![5.0];
        b.learnable = false;
        store.insert(a).unwrap();
        store.insert(b).unwrap();
        zero_grads(&mut store);
        assert_eq!(store.get(0).grad, vec![0.0, 0.0]);
        assert_eq!(store.get(1).grad, vec![0.0]);
    }

    #[test]
    fn zero_grads_on_empty_store_is_noop() {
        let mut store = ParamStore::<f32>::new();
        zero_grads(&mut store);
        assert!(store.is_empty());
    }

    #[test]
    fn rejects_duplicate_names_and_bad_shapes() {
        let mut store = ParamStore::<f32>::new();
        store.insert(ParamTensor::zeros("w", vec![3])).unwrap();
        assert!(store.insert(ParamTensor::zeros("w", vec![1])).is_err());
        assert!(ParamTensor::<f32>::from_values("x", vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn values_and_grad_share_element_count() {
        let t = ParamTensor::<f32>::zeros("g", vec![4, 5, 2]);
        assert_eq!(t.values.len(), 40);
        assert_eq!(t.grad.len(), 40);
    }
}
