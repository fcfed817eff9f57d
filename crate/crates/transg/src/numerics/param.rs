use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Result, TransgError};

/// A named learnable (or buffer) tensor with gradient and Adam moment slots.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Accumulated gradient; `None` until the first backward pass after a zero.
    pub grad: Option<Tensor>,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    /// Buffers (e.g. batch-norm running statistics) are not trainable.
    pub trainable: bool,
}

/// Ordered collection of named parameters. Insertion order is the canonical
/// order for checkpoint serialization and gradient checking.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let shape = value.shape.clone();
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: None,
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            trainable,
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        let i = *self.index.get(name)?;
        Some(&mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Adds `delta` into the named parameter's gradient slot.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| TransgError::Contract(format!("unknown parameter {name}")))?;
        if p.value.shape != delta.shape {
            return Err(TransgError::ShapeMismatch {
                op: "accumulate_grad",
                lhs: p.value.shape.clone(),
                rhs: delta.shape.clone(),
            });
        }
        match &mut p.grad {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(&delta.data) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta.clone()),
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            p.grad = None;
        }
    }

    /// Total number of scalar values across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
