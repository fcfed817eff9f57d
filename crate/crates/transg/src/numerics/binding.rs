use std::collections::HashMap;

use super::param::ParamSet;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Maps named parameters to tape leaves for one forward pass.
///
/// Each parameter becomes exactly one leaf per tape, so its gradient
/// accumulates in a single place; after backward, [`Binding::pull_grads`]
/// copies tape gradients into the parameter set.
#[derive(Default)]
pub struct Binding {
    memo: HashMap<String, Var>,
    bound: Vec<(String, Var)>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf for the named parameter, creating it on first use.
    pub fn bind(&mut self, tape: &mut Tape, params: &ParamSet, name: &str) -> Var {
        if let Some(&v) = self.memo.get(name) {
            return v;
        }
        let p = params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        let v = tape.leaf(p.value.clone(), p.trainable);
        self.memo.insert(name.to_string(), v);
        self.bound.push((name.to_string(), v));
        v
    }

    /// Accumulates tape gradients into the bound parameters.
    pub fn pull_grads(&self, tape: &Tape, params: &mut ParamSet) -> Result<()> {
        for (name, var) in &self.bound {
            if let Some(g) = tape.grad(*var) {
                params.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}
