use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 64-bit array with an optional gradient accumulator.
///
/// Every learnable quantity in the engine (plane entries, MLP weights,
/// pose twists, the routing threshold) is stored as one of these inside a
/// [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Constant tensor. Rejects NaN/Inf and mismatched lengths.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("tensor element {i}")));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    /// Learnable tensor; carries a zeroed gradient.
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        match (on, self.grad.is_some()) {
            (true, false) => self.grad = Some(vec![0.0; self.data.len()]),
            (false, true) => self.grad = None,
            _ => {}
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub(crate) fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    /// Split borrow used by the optimizer.
    pub(crate) fn data_and_grad_mut(&mut self) -> (&mut [f64], Option<&[f64]>) {
        (&mut self.data, self.grad.as_deref())
    }
}

/// Handle to a tensor registered in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Optimizer groups; each has its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Field,
    Mlp,
    Pose,
    Threshold,
}

#[derive(Clone, Debug)]
struct ParamEntry {
    name: String,
    group: ParamGroup,
    tensor: Tensor,
    // set by `store_gradients`, cleared by the optimizer
    fresh: bool,
}

/// Owning store of every learnable tensor.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            tensor,
            fresh: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Swap in a new tensor (e.g. after resampling). Keeps the grad flag.
    pub fn replace(&mut self, id: ParamId, mut tensor: Tensor) {
        let entry = &mut self.entries[id.0];
        tensor.set_requires_grad(entry.tensor.requires_grad());
        entry.tensor = tensor;
    }

    pub fn set_requires_grad(&mut self, id: ParamId, on: bool) {
        self.entries[id.0].tensor.set_requires_grad(on);
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Write reverse-pass results into every learnable tensor. Parameters the
    /// loss did not reach get zeros.
    pub fn store_gradients(&mut self, grads: &super::Gradients) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            let Some(dst) = e.tensor.grad_mut() else { continue };
            match grads.get(ParamId(i)) {
                Some(g) => dst.copy_from_slice(g),
                None => dst.iter_mut().for_each(|v| *v = 0.0),
            }
            e.fresh = true;
        }
    }

    pub(crate) fn is_fresh(&self, id: ParamId) -> bool {
        self.entries[id.0].fresh
    }

    pub(crate) fn clear_fresh(&mut self) {
        for e in &mut self.entries {
            e.fresh = false;
        }
    }
}
