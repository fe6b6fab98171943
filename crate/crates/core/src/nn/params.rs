use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Arc<Tensor>,
}

/// Every trainable tensor of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param { name: name.into(), value: Arc::new(value) });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform weights: `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn register_glorot(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as Real).sqrt();
        let t = Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-limit..limit));
        self.register(name, t)
    }

    pub fn register_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.register(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Mutable access for optimizer updates; copies the data if a graph still
    /// holds a reference.
    pub fn data_mut(&mut self, id: ParamId) -> &mut [Real] {
        Arc::make_mut(&mut self.params[id.0].value).data_mut()
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(shape_err!(
                "parameter {} has shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            ));
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }
}

/// One gradient buffer per parameter, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<Real>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { grads: store.params.iter().map(|p| vec![0.0; p.value.len()]).collect() }
    }

    /// Buffers in parameter order; lengths must match the store.
    pub fn from_buffers(store: &ParamStore, grads: Vec<Vec<Real>>) -> Result<Self> {
        let ok = grads.len() == store.len() && grads.iter().zip(&store.params).all(|(g, p)| g.len() == p.value.len());
        if !ok {
            return Err(shape_err!("gradient buffers do not match the parameter store"));
        }
        Ok(Self { grads })
    }

    pub fn get(&self, id: ParamId) -> &[Real] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [Real] {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: Real) {
        self.grads.iter_mut().flatten().for_each(|v| *v *= c);
    }

    pub fn global_norm(&self) -> Real {
        self.grads.iter().flatten().map(|v| v * v).sum::<Real>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|v| v.is_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Real]> {
        self.grads.iter().map(|g| g.as_slice())
    }

    /// Largest absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &Gradients) -> Real {
        self.grads
            .iter()
            .flatten()
            .zip(other.grads.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }
}

/// A tape with parameters bound lazily as gradient-tracking leaves.
pub struct Graph<'p> {
    tape: Tape,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf_shared(self.store.shared(id), true);
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradients of every parameter used on this graph; unused ones are zero.
    pub fn gradients(&self) -> Gradients {
        let mut g = Gradients::zeros_like(self.store);
        self.add_gradients_to(&mut g);
        g
    }

    pub fn add_gradients_to(&self, out: &mut Gradients) {
        for (i, slot) in self.bound.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(grad) = self.tape.grad(*v) {
                    out.grads[i].iter_mut().zip(grad).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
