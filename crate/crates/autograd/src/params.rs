use std::ops::Index;

use crate::{AutogradError, Gradients, Graph, Result, Tensor, Var};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; names must be unique within the set.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Overwrites every tensor with the same-named tensor from `other`.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.names != self.names {
            return Err(AutogradError::Shape(
                "parameter names differ between sets".into(),
            ));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            dst.expect_same_shape(src)?;
            dst.clone_from(src);
        }
        Ok(())
    }

    /// Places every tensor on `graph` as a gradient-tracking leaf.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        Bound {
            vars: self.tensors.iter().map(|t| graph.param(t.clone())).collect(),
        }
    }

    /// Places every tensor on `graph` as a constant.
    pub fn bind_frozen<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| graph.constant(t.clone()))
                .collect(),
        }
    }
}

/// A [`ParamSet`] as graph variables.
pub struct Bound<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    /// Gradients for every parameter in set order; unused parameters get zeros.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.get_or_zeros(*v)).collect()
    }

    pub fn var(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }
}

impl<'g> Index<ParamId> for Bound<'g> {
    type Output = Var<'g>;

    fn index(&self, id: ParamId) -> &Var<'g> {
        &self.vars[id.0]
    }
}
