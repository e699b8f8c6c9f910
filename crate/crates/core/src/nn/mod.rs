//! Parameter storage, layers and the Adam optimizer.
//!
//! Models own a [`TensorSet`] of parameters (and one of non-trainable
//! buffers such as batch-norm running statistics). Layers only hold
//! [`ParamId`]s into those sets; a forward pass first binds the set to a
//! [`Graph`], either as differentiable leaves or as frozen constants.

mod adam;
mod layers;

pub use adam::{Adam, AdamConfig, AdamState};
pub use layers::{BatchNorm, Conv, ConvTranspose, Gru, Linear};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl TensorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate tensor name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces every value with the same-named entry of `other`.
    ///
    /// Fails without modifying `self` when names or shapes differ.
    pub fn assign_from(&mut self, other: &TensorSet) -> Result<(), String> {
        if self.names != other.names {
            return Err("tensor names differ".into());
        }
        for (a, b) in self.values.iter().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
            }
        }
        self.values.clone_from(&other.values);
        Ok(())
    }

    /// Binds every tensor as a differentiable leaf.
    pub fn bind<'g>(&self, g: &'g Graph) -> Bound<'g> {
        Bound { vars: self.values.iter().map(|t| g.leaf(t.clone())).collect() }
    }

    /// Binds every tensor as a constant (no gradients flow into it).
    pub fn bind_frozen<'g>(&self, g: &'g Graph) -> Bound<'g> {
        Bound { vars: self.values.iter().map(|t| g.constant(t.clone())).collect() }
    }
}

/// A [`TensorSet`] bound to a graph.
pub struct Bound<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn get(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass state: the mode, plus batch statistics gathered by
/// batch-norm layers in training mode (applied to running buffers only when
/// the caller commits them).
pub struct ForwardCtx {
    pub mode: Mode,
    pending: Vec<(ParamId, ParamId, Tensor, Tensor)>,
}

impl ForwardCtx {
    pub fn new(mode: Mode) -> Self {
        Self { mode, pending: Vec::new() }
    }

    pub fn train() -> Self {
        Self::new(Mode::Train)
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval)
    }

    pub(crate) fn record_stats(&mut self, mean_buf: ParamId, var_buf: ParamId, mean: Tensor, var: Tensor) {
        self.pending.push((mean_buf, var_buf, mean, var));
    }

    /// Folds the recorded batch statistics into the running buffers.
    pub fn commit(self, buffers: &mut TensorSet, momentum: f64) {
        for (mid, vid, mean, var) in self.pending {
            let rm = buffers.get_mut(mid);
            for (r, m) in rm.data_mut().iter_mut().zip(mean.data()) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            let rv = buffers.get_mut(vid);
            for (r, v) in rv.data_mut().iter_mut().zip(var.data()) {
                *r = (1.0 - momentum) * *r + momentum * v;
            }
        }
    }
}

/// Uniform `(-bound, bound)` initialization with `bound = 1 / sqrt(fan_in)`.
pub fn fan_in_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checksum_changes_with_any_bit() {
        let mut set = TensorSet::new();
        let id = set.add("w", Tensor::from_fn([3], |i| i as f64));
        let before = set.checksum();
        set.get_mut(id).data_mut()[1] = f64::from_bits(1f64.to_bits() + 1);
        assert_ne!(before, set.checksum());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = fan_in_uniform(&mut ChaCha8Rng::seed_from_u64(3), &[4, 25], 25);
        let b = fan_in_uniform(&mut ChaCha8Rng::seed_from_u64(3), &[4, 25], 25);
        assert_eq!(a, b);
        assert!(a.max_abs() < 0.2);
    }

    #[test]
    fn assign_rejects_shape_mismatch_without_mutation() {
        let mut a = TensorSet::new();
        a.add("w", Tensor::zeros([2]));
        let mut b = TensorSet::new();
        b.add("w", Tensor::zeros([3]));
        assert!(a.assign_from(&b).is_err());
        assert_eq!(a.get(ParamId(0)).shape(), &[2]);
    }
}
