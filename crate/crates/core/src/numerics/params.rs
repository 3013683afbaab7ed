use alloc::string::String;
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{contract, Result};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Parameters placed on a particular tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on the tape. `trainable = false` binds them as
    /// constants so no gradient is tracked.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect() }
    }

    /// Gradients of every bound parameter after `g.backward`, zero where none reached.
    pub fn grads(&self, g: &Graph, bound: &Bound) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .zip(&bound.vars)
            .map(|(t, &v)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; t.len()]))
            .collect()
    }

    /// Flat copy of all values in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites all values from a flat slice in declaration order.
    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        contract!(values.len() == self.count(), "expected {} values, got {}", self.count(), values.len());
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

impl Bound {
    /// Wraps vars already on a tape, in the owning set's declaration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }
}
