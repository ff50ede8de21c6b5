//! Named, persistent parameter storage shared by the model, the optimizer,
//! and the checkpoint format.
//!
//! A [`ParamSet`] owns the master (full-precision) values. Each training step
//! binds every parameter into a fresh [`Graph`] as a leaf, reads gradients
//! back out by [`ParamId`], and lets the optimizer replace the stored values.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Stable handle to one parameter in a [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub usize);

/// One named parameter tensor.
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Post-update elementwise lower bound (used by learnable quantizer
    /// scales, which must stay positive).
    pub clamp_min: Option<f64>,
}

/// An ordered, named collection of parameters.
#[derive(Default)]
pub struct ParamSet {
    items: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Registers a parameter and returns its handle. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.add_with_clamp(name, value, None)
    }

    /// Registers a parameter whose values are clamped to at least
    /// `clamp_min` after every optimizer step.
    pub fn add_clamped(&mut self, name: impl Into<String>, value: Tensor, clamp_min: f64) -> ParamId {
        self.add_with_clamp(name, value, Some(clamp_min))
    }

    fn add_with_clamp(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        clamp_min: Option<f64>,
    ) -> ParamId {
        let name = name.into();
        assert!(
            self.lookup(&name).is_none(),
            "duplicate parameter name {name:?}"
        );
        self.items.push(Param {
            name,
            value,
            clamp_min,
        });
        ParamId(self.items.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.items[id.0]
    }

    /// Replaces the stored value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.items[id.0].value.shape(),
            value.shape(),
            "parameter {:?} shape changed",
            self.items[id.0].name
        );
        self.items[id.0].value = value;
    }

    /// Finds a parameter by name.
    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.items
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.items.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Inserts every parameter into `g` as a leaf, in registration order.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.items.iter().map(|p| g.leaf(p.value.clone())).collect(),
        }
    }
}

/// The graph variables of one [`ParamSet::bind`] call, aligned by index.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Collects per-parameter gradients from a finished backward pass,
    /// aligned with the owning [`ParamSet`].
    pub fn collect_grads(&self, grads: &crate::graph::Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| grads.get(v).cloned()).collect()
    }
}
