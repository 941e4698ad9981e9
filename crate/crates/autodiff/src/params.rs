use crate::error::{AdError, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique name and marks it as trainable.
    pub fn add(&mut self, name: &str, mut t: Tensor) -> Result<ParamId> {
        if self.names.iter().any(|n| n == name) {
            return Err(AdError::Contract(format!("duplicate parameter name {name}")));
        }
        t.requires_grad = true;
        t.grad = Some(vec![0.0; t.data.len()]);
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Concatenation of all parameter values in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Concatenation of all gradients in registration order (zeros where absent).
    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.clone().unwrap_or_else(|| vec![0.0; t.data.len()]))
            .collect()
    }

    /// Overwrites every value from a flat vector laid out as in [`ParamStore::flat_values`].
    pub fn set_flat_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(AdError::Shape(format!("expected {} values, got {}", self.numel(), values.len())));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Replaces values with those of `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(AdError::Format("parameter names differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape != src.shape {
                return Err(AdError::Format(format!("shape {:?} vs {:?}", dst.shape, src.shape)));
            }
            dst.data.clone_from(&src.data);
        }
        Ok(())
    }
}
