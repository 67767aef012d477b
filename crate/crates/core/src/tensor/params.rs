use std::collections::HashSet;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::Scalar;

/// Role of a learnable tensor; decides weight-decay eligibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    NormAffine,
    Mask,
    Attention,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        !matches!(self, ParamKind::Bias | ParamKind::NormAffine)
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<S> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub requires_grad: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

impl BufferId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable parameters plus non-learnable state buffers
/// (batch-norm running statistics).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Parameter<S>>,
    buffers: Vec<(String, Tensor<S>)>,
    names: HashSet<String>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashSet::new(),
        }
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if !self.names.insert(name.to_string()) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        Ok(())
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        self.claim(&name)?;
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name,
            kind,
            value,
            grad,
            requires_grad: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<BufferId> {
        let name = name.into();
        self.claim(&name)?;
        self.buffers.push((name, value));
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<S> {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<S> {
        &mut self.buffers[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.buffers.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.buffers.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of learnable scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Places every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), p.requires_grad))
            .collect()
    }

    /// Adds the gradients of bound leaves into each parameter's accumulator.
    pub fn accumulate(&mut self, bound: &[Var], grads: &Gradients<S>) {
        for (p, &v) in self.params.iter_mut().zip(bound) {
            if let Some(g) = grads.get(v) {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(S::zero()));
    }
}
