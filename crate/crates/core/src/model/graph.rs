use std::sync::Arc;

use crate::error::Result;
use crate::tensor::{eager, Activation, BoundParams, ParamSet, Tape, Tensor, Var};

/// The operations the networks are built from. Implemented by a recording
/// backend (for training) and an eager one (for inference), so both run the
/// same layer code.
pub trait Graph {
    type V: Clone;

    fn param(&mut self, name: &str) -> Result<Self::V>;
    fn constant(&mut self, t: Tensor) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;

    fn conv2d(&mut self, x: &Self::V, k: &Self::V, b: Option<&Self::V>, dilation: usize) -> Result<Self::V>;
    fn max_pool2d(&mut self, x: &Self::V) -> Result<Self::V>;
    fn linear(&mut self, x: &Self::V, w: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn act(&mut self, x: &Self::V, kind: Activation) -> Result<Self::V>;
    fn global_avg_pool(&mut self, x: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn one_minus(&mut self, x: &Self::V) -> Self::V;
    fn scale_channels(&mut self, x: &Self::V, gate: &Self::V) -> Result<Self::V>;
    fn repeat_channels(&mut self, x: &Self::V, times: usize) -> Result<Self::V>;
    fn concat_channels(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
}

/// Records onto a tape with parameters already bound to it.
pub struct Recorder<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a BoundParams,
}

impl<'a> Recorder<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a BoundParams) -> Self {
        Recorder { tape, params }
    }
}

impl Graph for Recorder<'_> {
    type V = Var;

    fn param(&mut self, name: &str) -> Result<Var> {
        self.params.var(name)
    }
    fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.tape.value(*v)
    }
    fn conv2d(&mut self, x: &Var, k: &Var, b: Option<&Var>, dilation: usize) -> Result<Var> {
        self.tape.conv2d(*x, *k, b.copied(), dilation)
    }
    fn max_pool2d(&mut self, x: &Var) -> Result<Var> {
        self.tape.max_pool2d(*x)
    }
    fn linear(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        self.tape.linear(*x, *w, *b)
    }
    fn act(&mut self, x: &Var, kind: Activation) -> Result<Var> {
        self.tape.activation(*x, kind)
    }
    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        self.tape.global_avg_pool(*x)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.mul(*a, *b)
    }
    fn one_minus(&mut self, x: &Var) -> Var {
        self.tape.one_minus(*x)
    }
    fn scale_channels(&mut self, x: &Var, gate: &Var) -> Result<Var> {
        self.tape.scale_channels(*x, *gate)
    }
    fn repeat_channels(&mut self, x: &Var, times: usize) -> Result<Var> {
        self.tape.repeat_channels(*x, times)
    }
    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.concat_channels(*a, *b)
    }
}

/// Evaluates immediately; intermediate values are dropped as soon as nothing
/// refers to them.
pub struct Eager<'a> {
    params: &'a ParamSet,
}

impl<'a> Eager<'a> {
    pub fn new(params: &'a ParamSet) -> Self {
        Eager { params }
    }
}

type Shared = Arc<Tensor>;

impl Graph for Eager<'_> {
    type V = Shared;

    fn param(&mut self, name: &str) -> Result<Shared> {
        Ok(Arc::new(self.params.require(name)?.clone()))
    }
    fn constant(&mut self, t: Tensor) -> Shared {
        Arc::new(t)
    }
    fn value<'a>(&'a self, v: &'a Shared) -> &'a Tensor {
        v
    }
    fn conv2d(&mut self, x: &Shared, k: &Shared, b: Option<&Shared>, dilation: usize) -> Result<Shared> {
        Ok(Arc::new(eager::conv2d(x, k, b.map(|b| b.as_ref()), dilation)?))
    }
    fn max_pool2d(&mut self, x: &Shared) -> Result<Shared> {
        Ok(Arc::new(eager::max_pool2d(x)?))
    }
    fn linear(&mut self, x: &Shared, w: &Shared, b: &Shared) -> Result<Shared> {
        Ok(Arc::new(eager::linear(x, w, b)?))
    }
    fn act(&mut self, x: &Shared, kind: Activation) -> Result<Shared> {
        Ok(Arc::new(eager::activation(x, kind)))
    }
    fn global_avg_pool(&mut self, x: &Shared) -> Result<Shared> {
        Ok(Arc::new(eager::global_avg_pool(x)?))
    }
    fn add(&mut self, a: &Shared, b: &Shared) -> Result<Shared> {
        Ok(Arc::new(eager::zip(a, b, |x, y| x + y)?))
    }
    fn mul(&mut self, a: &Shared, b: &Shared) -> Result<Shared> {
        Ok(Arc::new(eager::zip(a, b, |x, y| x * y)?))
    }
    fn one_minus(&mut self, x: &Shared) -> Shared {
        Arc::new(x.map(|v| 1.0 - v))
    }
    fn scale_channels(&mut self, x: &Shared, gate: &Shared) -> Result<Shared> {
        Ok(Arc::new(eager::scale_channels(x, gate)?))
    }
    fn repeat_channels(&mut self, x: &Shared, times: usize) -> Result<Shared> {
        Ok(Arc::new(eager::repeat_channels(x, times)?))
    }
    fn concat_channels(&mut self, a: &Shared, b: &Shared) -> Result<Shared> {
        Ok(Arc::new(eager::concat_channels(a, b)?))
    }
}
