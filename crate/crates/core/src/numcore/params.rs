use crate::error::{Error, Result};
use crate::numcore::{Gradients, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::scalar::Real;

/// Named, ordered parameter tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Appends a trainable tensor and returns its slot.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, slot: usize) -> &Tensor<T> {
        &self.tensors[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor<T> {
        &mut self.tensors[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn set_trainable(&mut self, flag: bool) {
        self.tensors.iter_mut().for_each(|t| t.set_requires_grad(flag));
    }

    /// Records every tensor on `tape`; slot `i` maps to `vars[i]`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    /// Records every tensor as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Copies adjoints from a backward pass into each trainable tensor's grad.
    /// Trainable tensors the loss does not depend on receive zeros.
    pub fn absorb(&mut self, grads: &Gradients<T>, vars: &[Var]) -> Result<()> {
        if vars.len() != self.tensors.len() {
            return Err(Error::dim("absorb", format!("{} vars for {} params", vars.len(), self.tensors.len())));
        }
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            if !t.requires_grad() {
                continue;
            }
            let g = grads.get(v).map_or_else(|| vec![T::zero(); t.numel()], <[T]>::to_vec);
            t.set_grad(g)?;
        }
        Ok(())
    }

    /// Overwrites values by name from `other`, requiring identical names and
    /// shapes.
    pub fn load_from(&mut self, other: &[(String, Tensor<T>)]) -> Result<()> {
        if other.len() != self.tensors.len() {
            return Err(Error::dim("load_from", format!("expected {} tensors, got {}", self.tensors.len(), other.len())));
        }
        for (name, t) in other {
            let slot = self.slot(name).ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
            let dst = &mut self.tensors[slot];
            if dst.shape() != t.shape() {
                return Err(Error::dim("load_from", format!("{name}: expected {:?}, got {:?}", dst.shape(), t.shape())));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}

/// Dense layer `y = x W + b` addressing two slots of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers `{name}.w` with LeCun-normal entries and `{name}.b` zero.
    pub fn register<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let std = T::one() / T::of_usize(fan_in.max(1)).sqrt();
        let w: Vec<T> = (0..fan_in * fan_out).map(|_| rng.normal::<T>() * std).collect();
        let weight = store.insert(format!("{name}.w"), Tensor::new(vec![fan_in, fan_out], w).expect("sized"));
        let bias = store.insert(format!("{name}.b"), Tensor::zeros(vec![1, fan_out]));
        Self { weight, bias, fan_in, fan_out }
    }

    /// Same as [`Linear::register`] but with a zero weight matrix.
    pub fn register_zero<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.insert(format!("{name}.w"), Tensor::zeros(vec![fan_in, fan_out]));
        let bias = store.insert(format!("{name}.b"), Tensor::zeros(vec![1, fan_out]));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let h = tape.matmul(x, vars[self.weight])?;
        tape.add_row(h, vars[self.bias])
    }
}
