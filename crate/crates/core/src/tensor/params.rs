use std::collections::HashMap;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named tensors in insertion order. The order is the checkpoint order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = tensor,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, tensor));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Entries whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for (n, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(n, t.clone());
        }
        out
    }

    pub fn extend(&mut self, other: ParamSet) {
        for (n, t) in other.entries {
            self.insert(n, t);
        }
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            out.insert(n, Tensor::zeros(t.shape()));
        }
        out
    }

    /// In-place `self += other`, matching by name.
    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        for (name, t) in other.iter() {
            let dst = self
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.to_string()))?;
            if dst.shape() != t.shape() {
                return Err(Error::shape("param add", name.to_string()));
            }
            for (a, b) in dst.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.iter_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (n, t) in self.iter() {
            t.check_finite(n)?;
        }
        Ok(())
    }

    /// Put every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        self.bind_where(tape, |_| trainable)
    }

    /// Like [`ParamSet::bind`], choosing trainability per name.
    pub fn bind_where(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> BoundParams {
        let mut vars = HashMap::with_capacity(self.len());
        let mut order = Vec::with_capacity(self.len());
        for (name, t) in self.iter() {
            let v = if trainable(name) {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            vars.insert(name.to_string(), v);
            order.push((name.to_string(), v, t.shape().to_vec()));
        }
        BoundParams { vars, order }
    }
}

/// A [`ParamSet`] placed on a tape.
pub struct BoundParams {
    vars: HashMap<String, Var>,
    order: Vec<(String, Var, Vec<usize>)>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Gradients keyed by parameter name; zeros for parameters bound as
    /// constants or unreachable from the loss.
    pub fn gradients(&self, grads: &mut Gradients) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, v, shape) in &self.order {
            let g = grads.take(*v).unwrap_or_else(|| Tensor::zeros(shape));
            out.insert(name.clone(), g);
        }
        out
    }
}
