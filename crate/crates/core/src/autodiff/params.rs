use crate::autodiff::tape::{Gradients, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Ordered, uniquely named parameter tensors.
///
/// Flattening concatenates entries in insertion order; that order is the
/// layout of every gradient vector derived from the set.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Real> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<Self> {
        self.push(name, tensor)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor<S> {
        &self.entries[i].1
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.numel());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds a set shaped like `template` from a flat vector.
    pub fn unflatten(vec: &[S], template: &ParamSet<S>) -> Result<Self> {
        let expected = template.numel();
        if vec.len() != expected {
            return Err(Error::Length {
                expected,
                got: vec.len(),
            });
        }
        let mut offset = 0;
        let entries = template
            .entries
            .iter()
            .map(|(name, t)| {
                let n = t.len();
                let tensor =
                    Tensor::from_parts(t.shape().to_vec(), vec[offset..offset + n].to_vec());
                offset += n;
                (name.clone(), tensor)
            })
            .collect();
        Ok(Self { entries })
    }

    /// Registers every tensor as a differentiable leaf, in order.
    pub fn to_tape(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect()
    }

    /// Collects the gradients of `vars` (as returned by [`Self::to_tape`]) into
    /// one flat vector laid out like [`Self::flatten`].
    pub fn flat_gradient(&self, grads: &mut Gradients<S>, vars: &[Var]) -> Vec<S> {
        let mut out = Vec::with_capacity(self.numel());
        for &v in vars {
            out.extend_from_slice(grads.take(v).data());
        }
        out
    }

    /// `self - rate * step`, entry by entry over the flattened layout.
    pub fn descend(&self, step: &[S], rate: S) -> Result<Self> {
        let flat = self.flatten();
        if flat.len() != step.len() {
            return Err(Error::Length {
                expected: flat.len(),
                got: step.len(),
            });
        }
        let updated: Vec<S> = flat.iter().zip(step).map(|(&p, &g)| p - rate * g).collect();
        Self::unflatten(&updated, self)
    }

    pub fn cast<T: Real>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }
}
