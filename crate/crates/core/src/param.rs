//! Named parameter storage.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::{Gradients, Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
}

/// Parameters in creation order, with unique dotted names such as
/// `stage1.block0.fc1.weight`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, usize>,
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    /// Bind explicit tape variables, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value: Arc::new(value),
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    /// Mutable access; copies the tensor only if a tape still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::dim(
                "ParamStore::set",
                format!("{}: {:?} vs {:?}", slot.name, slot.value.shape(), value.shape()),
            ));
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Scalars held by parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    /// Put every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &Tape<T>) -> BoundParams {
        BoundParams(self.params.iter().map(|p| tape.leaf(Arc::clone(&p.value))).collect())
    }

    /// Gradients for every parameter, zeros where the loss did not depend on it.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        bound.0.iter().map(|&v| grads.take(v)).collect()
    }

    /// FNV-1a hash over names, shapes and raw bits; equal hashes mean bitwise-equal stores.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for &d in p.value.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            let mut buf = Vec::new();
            T::to_le_bytes_vec(p.value.data(), &mut buf);
            eat(&buf);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.weight", Tensor::zeros([2])).unwrap();
        assert!(s.add("a.weight", Tensor::zeros([2])).is_err());
        assert_eq!(s.id("a.weight"), Some(ParamId(0)));
    }

    #[test]
    fn get_mut_after_tape_dropped_does_not_alias() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::ones([3])).unwrap();
        let tape = Tape::new();
        let bound = s.bind(&tape);
        s.get_mut(id).data_mut()[0] = 5.0;
        assert_eq!(tape.value(bound.var(id)).data()[0], 1.0);
        assert_eq!(s.get(id).data()[0], 5.0);
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::ones([3])).unwrap();
        let before = s.fingerprint();
        assert_eq!(before, s.clone().fingerprint());
        s.get_mut(id).data_mut()[2] = 1.0 + f64::EPSILON;
        assert_ne!(before, s.fingerprint());
    }
}
