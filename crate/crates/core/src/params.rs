//! Named parameter and buffer storage shared by the network and optimizer.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Non-trainable state, e.g. batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Buffer {
    pub name: String,
    pub value: Tensor,
}

/// Parameters keep their id for life; removal leaves a hole so ids held by
/// layers never shift.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Option<Parameter>>,
    buffers: Vec<Option<Buffer>>,
    by_name: HashMap<String, ParamId>,
    buffers_by_name: HashMap<String, BufferId>,
    seed: u64,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            ..Self::default()
        }
    }

    /// RNG for one named parameter, independent of registration order.
    pub fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name))
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Some(Parameter { name, value, grad }));
        Ok(id)
    }

    /// Zero-mean normal initialization with the given standard deviation.
    pub fn add_normal(&mut self, name: &str, shape: Shape, std: f64) -> Result<ParamId> {
        let mut rng = self.rng_for(name);
        let value = Tensor::randn(shape, std, &mut rng);
        self.add(name, value)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<BufferId> {
        let name = name.into();
        if self.buffers_by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate buffer name {name:?}")));
        }
        let id = BufferId(self.buffers.len());
        self.buffers_by_name.insert(name.clone(), id);
        self.buffers.push(Some(Buffer { name, value }));
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        self.params[id.0].as_ref().expect("parameter was removed")
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        self.params[id.0].as_mut().expect("parameter was removed")
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.params.get(id.0).is_some_and(|p| p.is_some())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].as_ref().expect("buffer was removed").value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor {
        &mut self.buffers[id.0].as_mut().expect("buffer was removed").value
    }

    pub fn buffer_id(&self, name: &str) -> Option<BufferId> {
        self.buffers_by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (ParamId(i), p)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .filter_map(|(i, p)| p.as_mut().map(|p| (ParamId(i), p)))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (BufferId, &Buffer)> {
        self.buffers
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.as_ref().map(|b| (BufferId(i), b)))
    }

    /// Removes every parameter and buffer whose name starts with `prefix`.
    /// Returns how many parameters were removed.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let mut removed = 0;
        for slot in &mut self.params {
            if slot.as_ref().is_some_and(|p| p.name.starts_with(prefix)) {
                let p = slot.take().expect("checked");
                self.by_name.remove(&p.name);
                removed += 1;
            }
        }
        for slot in &mut self.buffers {
            if slot.as_ref().is_some_and(|b| b.name.starts_with(prefix)) {
                let b = slot.take().expect("checked");
                self.buffers_by_name.remove(&b.name);
            }
        }
        removed
    }

    /// Total trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.iter().map(|(_, p)| p.value.numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> crate::autograd::Var {
        tape.param(id, &self.get(id).value)
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.iter_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the tape's gradients of every bound parameter into `grad`.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (id, var) in tape.bound_params() {
            if let (Some(Some(p)), Some(g)) = (self.params.get_mut(id.0), tape.grad(var)) {
                p.grad.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(1);
        s.add("a", Tensor::scalar(1.0)).unwrap();
        assert!(s.add("a", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn init_depends_on_name_not_order() {
        let mut a = ParamStore::new(7);
        a.add_normal("x", Shape::new(1, 1, 2, 2), 1.0).unwrap();
        let ya = a.add_normal("y", Shape::new(1, 1, 2, 2), 1.0).unwrap();
        let mut b = ParamStore::new(7);
        let yb = b.add_normal("y", Shape::new(1, 1, 2, 2), 1.0).unwrap();
        assert_eq!(a.get(ya).value, b.get(yb).value);
    }

    #[test]
    fn removal_keeps_ids_stable() {
        let mut s = ParamStore::new(0);
        let a = s.add("keep.a", Tensor::scalar(1.0)).unwrap();
        s.add("drop.b", Tensor::full(Shape::new(1, 1, 1, 3), 0.0)).unwrap();
        let c = s.add("keep.c", Tensor::scalar(3.0)).unwrap();
        assert_eq!(s.remove_prefix("drop."), 1);
        assert_eq!(s.get(a).value.data(), &[1.0]);
        assert_eq!(s.get(c).value.data(), &[3.0]);
        assert_eq!(s.scalar_count(), 2);
    }
}
