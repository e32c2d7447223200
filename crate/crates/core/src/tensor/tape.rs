//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every operation appends a node holding its output value and the handles of
//! its inputs. [`Tape::backward`] consumes the tape and sweeps it in reverse,
//! accumulating vector-Jacobian products into each input. Leaves created with
//! [`Tape::param`] receive gradients; leaves created with [`Tape::constant`]
//! are detached and never do.


use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Negative slope in `(0, 1)`.
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            // slope at exactly zero is alpha
            Activation::LeakyRelu(alpha) => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    GlobalAvgPool {
        input: Var,
        plane: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine {
        input: Var,
        scale: f64,
    },
    Log {
        input: Var,
        floor: f64,
    },
    Sqrt(Var),
    Sum(Var),
    Expand(Var),
    ScaleChannels {
        input: Var,
        gate: Var,
        plane: usize,
    },
    RepeatChannels {
        input: Var,
        times: usize,
    },
    ConcatChannels(Var, Var),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![input, kernel];
                v.extend(bias);
                v
            }
            Op::MaxPool2 { input, .. }
            | Op::Act { input, .. }
            | Op::GlobalAvgPool { input, .. }
            | Op::Affine { input, .. }
            | Op::Log { input, .. }
            | Op::RepeatChannels { input, .. }
            | Op::Sqrt(input)
            | Op::Sum(input)
            | Op::Expand(input)
            | Op::Reshape(input) => vec![input],
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Op::ScaleChannels { input, gate, .. } => vec![input, gate],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::ConcatChannels(a, b) => vec![a, b],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Which side of each kink an evaluation took, in recording order: the sign
/// pattern of every rectifier input, each pooling argmax and which side of
/// the floor every clamped logarithm fell on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Branches(Vec<Branch>);

#[derive(Clone, Debug, PartialEq)]
enum Branch {
    Above(Vec<bool>),
    Argmax(Vec<usize>),
}

/// A single-threaded recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    replay: Option<(Branches, usize)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose kinks follow `branches` instead of the values they see,
    /// so nearby parameters evaluate the same smooth piece of the function.
    /// Only forward values are meaningful on such a tape.
    pub fn replaying(branches: Branches) -> Self {
        Tape {
            nodes: Vec::new(),
            replay: Some((branches, 0)),
        }
    }

    fn next_branch(&mut self, len: usize) -> Result<Option<Branch>> {
        let Some((b, pos)) = &mut self.replay else {
            return Ok(None);
        };
        let next = b.0.get(*pos).cloned();
        *pos += 1;
        match next {
            Some(Branch::Above(m)) if m.len() == len => Ok(Some(Branch::Above(m))),
            Some(Branch::Argmax(a)) if a.len() == len => Ok(Some(Branch::Argmax(a))),
            _ => Err(Error::invalid("replayed branches do not match the computation")),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Detached leaf; contributes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// The kink choices made so far, for [`Tape::replaying`].
    pub fn branches(&self) -> Branches {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Act {
                    input,
                    kind: Activation::Relu | Activation::LeakyRelu(_),
                } => out.push(Branch::Above(self.value(*input).data().iter().map(|&x| x > 0.0).collect())),
                Op::MaxPool2 { argmax, .. } => out.push(Branch::Argmax(argmax.clone())),
                Op::Log { input, floor } => {
                    out.push(Branch::Above(self.value(*input).data().iter().map(|&x| x > *floor).collect()))
                }
                _ => {}
            }
        }
        Branches(out)
    }

    /// Copy of `v`'s value as a new detached leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Same-size zero-padded 2-D convolution of a `[C_in, H, W]` input with a
    /// `[C_out, C_in, k, k]` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Result<Var> {
        if dilation < 1 {
            return Err(Error::invalid("conv2d dilation must be at least 1"));
        }
        let (c_in, height, width) = self.value(input).chw()?;
        let kshape = self.shape(kernel).to_vec();
        let [c_out, k_in, kh, kw] = kshape[..] else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be rank 4, got {kshape:?}"),
            ));
        };
        if k_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels, kernel expects {k_in}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", "kernel must be square"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} for {c_out} output channels", self.shape(b)),
                ));
            }
        }
        let geom = ConvGeometry {
            c_in,
            c_out,
            height,
            width,
            kernel: kh,
            dilation,
        };
        let out = kernels::conv2d_forward(
            geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&[c_out, height, width], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    /// 2×2 max pooling with stride 2.
    pub fn max_pool2d(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if h < 2 || w < 2 {
            return Err(Error::shape(
                "max_pool2d",
                format!("{h}x{w} is smaller than the 2x2 window"),
            ));
        }
        let (mut out, mut argmax) = kernels::max_pool2_forward(self.value(input).data(), c, h, w);
        if let Some(Branch::Argmax(pinned)) = self.next_branch(argmax.len())? {
            let x = self.value(input).data();
            out = pinned.iter().map(|&i| x[i]).collect();
            argmax = pinned;
        }
        let value = Tensor::new(&[c, h / 2, w / 2], out)?;
        Ok(self.push(value, Op::MaxPool2 { input, argmax }))
    }

    /// `weight · flatten(input) + bias` with a `[M, N]` weight.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let n = self.value(input).len();
        let [m, cols] = self.shape(weight)[..] else {
            return Err(Error::shape("linear", "weight must be rank 2"));
        };
        if cols != n {
            return Err(Error::shape(
                "linear",
                format!("input length {n} but weight has {cols} columns"),
            ));
        }
        if self.shape(bias) != [m] {
            return Err(Error::shape("linear", format!("bias must have length {m}")));
        }
        let out = kernels::matvec(
            self.value(weight).data(),
            self.value(input).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[m], out)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(alpha) = kind {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::invalid(format!(
                    "leaky relu slope {alpha} outside (0, 1)"
                )));
            }
        }
        let mut value = self.value(input).map(|x| kind.apply(x));
        if matches!(kind, Activation::Relu | Activation::LeakyRelu(_)) {
            if let Some(Branch::Above(above)) = self.next_branch(value.len())? {
                let slope = if let Activation::LeakyRelu(a) = kind { a } else { 0.0 };
                let x = self.value(input).data();
                for ((y, &x), up) in value.data_mut().iter_mut().zip(x).zip(above) {
                    *y = if up { x } else { slope * x };
                }
            }
        }
        Ok(self.push(value, Op::Act { input, kind }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Tanh)
    }

    /// Per-channel spatial mean of a `[C, H, W]` tensor.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let plane = h * w;
        let means = kernels::plane_sums(self.value(input).data(), plane)
            .into_iter()
            .map(|s| s / plane as f64)
            .collect();
        let value = Tensor::new(&[c], means)?;
        Ok(self.push(value, Op::GlobalAvgPool { input, plane }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let value = self.zip_with(a, b, |x, y| x / y);
        Ok(self.push(value, Op::Div(a, b)))
    }

    /// `scale · input + shift`.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(input).map(|x| scale * x + shift);
        self.push(value, Op::Affine { input, scale })
    }

    pub fn scale(&mut self, input: Var, scale: f64) -> Var {
        self.affine(input, scale, 0.0)
    }

    pub fn add_scalar(&mut self, input: Var, shift: f64) -> Var {
        self.affine(input, 1.0, shift)
    }

    /// `1 − input`.
    pub fn one_minus(&mut self, input: Var) -> Var {
        self.affine(input, -1.0, 1.0)
    }

    /// Natural log of `max(input, floor)`; the gradient is zero where the
    /// floor is active.
    pub fn log_clamped(&mut self, input: Var, floor: f64) -> Result<Var> {
        let mut value = self.value(input).map(|x| x.max(floor).ln());
        if let Some(Branch::Above(above)) = self.next_branch(value.len())? {
            let x = self.value(input).data();
            for ((y, &x), up) in value.data_mut().iter_mut().zip(x).zip(above) {
                *y = if up { x.ln() } else { floor.ln() };
            }
        }
        Ok(self.push(value, Op::Log { input, floor }))
    }

    pub fn ln(&mut self, input: Var) -> Result<Var> {
        self.log_clamped(input, f64::MIN_POSITIVE)
    }

    pub fn sqrt(&mut self, input: Var) -> Var {
        let value = self.value(input).map(f64::sqrt);
        self.push(value, Op::Sqrt(input))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::Sum(input))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).len() as f64;
        let s = self.sum(input);
        self.scale(s, 1.0 / n)
    }

    /// Broadcast a one-element tensor to `shape`.
    pub fn expand(&mut self, scalar: Var, shape: &[usize]) -> Result<Var> {
        if self.value(scalar).len() != 1 {
            return Err(Error::shape("expand", "source must hold one element"));
        }
        let value = Tensor::full(shape, self.value(scalar).item());
        Ok(self.push(value, Op::Expand(scalar)))
    }

    /// `input[c, y, x] · gate[c]`.
    pub fn scale_channels(&mut self, input: Var, gate: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if self.shape(gate) != [c] {
            return Err(Error::shape(
                "scale_channels",
                format!("gate {:?} for {c} channels", self.shape(gate)),
            ));
        }
        let plane = h * w;
        let g = self.value(gate).data();
        let data = self
            .value(input)
            .data()
            .chunks(plane)
            .zip(g)
            .flat_map(|(ch, &s)| ch.iter().map(move |v| v * s))
            .collect();
        let value = Tensor::new(&[c, h, w], data)?;
        Ok(self.push(value, Op::ScaleChannels { input, gate, plane }))
    }

    /// Tile a `[1, H, W]` tensor to `[times, H, W]`.
    pub fn repeat_channels(&mut self, input: Var, times: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if c != 1 {
            return Err(Error::shape("repeat_channels", "input must have one channel"));
        }
        let src = self.value(input).data();
        let data = (0..times).flat_map(|_| src.iter().copied()).collect();
        let value = Tensor::new(&[times, h, w], data)?;
        Ok(self.push(value, Op::RepeatChannels { input, times }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("{ha}x{wa} vs {hb}x{wb}"),
            ));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(&[ca + cb, ha, wa], data)?;
        Ok(self.push(value, Op::ConcatChannels(a, b)))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(input)))
    }

    /// Reverse sweep from a one-element `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let leaves = self
            .nodes
            .into_iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.trainable {
                    return None;
                }
                let shape = node.value.shape().to_vec();
                let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                Some(Tensor::new(&shape, data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { leaves })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, contrib: Vec<f64>| accumulate(grads, v, self.nodes[v.0].value.len(), &contrib);

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                if needs(*input) {
                    acc(*input, kernels::conv2d_grad_input(*geom, val(*kernel), g));
                }
                if needs(*kernel) {
                    acc(*kernel, kernels::conv2d_grad_kernel(*geom, val(*input), g));
                }
                if let Some(b) = bias {
                    if needs(*b) {
                        acc(*b, kernels::plane_sums(g, geom.height * geom.width));
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if needs(*input) {
                    let mut gin = vec![0.0; self.nodes[input.0].value.len()];
                    for (&src, &go) in argmax.iter().zip(g) {
                        gin[src] += go;
                    }
                    acc(*input, gin);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = val(*input);
                let w = val(*weight);
                let n = x.len();
                if needs(*input) {
                    let mut gx = vec![0.0; n];
                    for (row, &gi) in w.chunks(n).zip(g) {
                        for (dst, wv) in gx.iter_mut().zip(row) {
                            *dst += wv * gi;
                        }
                    }
                    acc(*input, gx);
                }
                if needs(*weight) {
                    let gw = g.iter().flat_map(|&gi| x.iter().map(move |xv| gi * xv)).collect();
                    acc(*weight, gw);
                }
                if needs(*bias) {
                    acc(*bias, g.to_vec());
                }
            }
            Op::Act { input, kind } => {
                if needs(*input) {
                    let gin = val(*input)
                        .iter()
                        .zip(node.value.data())
                        .zip(g)
                        .map(|((&x, &y), &go)| go * kind.derivative(x, y))
                        .collect();
                    acc(*input, gin);
                }
            }
            Op::GlobalAvgPool { input, plane } => {
                if needs(*input) {
                    let inv = 1.0 / *plane as f64;
                    let gin = g
                        .iter()
                        .flat_map(|&gc| std::iter::repeat_n(gc * inv, *plane))
                        .collect();
                    acc(*input, gin);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    acc(*a, g.to_vec());
                }
                if needs(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    acc(*a, g.to_vec());
                }
                if needs(*b) {
                    acc(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, g.iter().zip(val(*b)).map(|(go, y)| go * y).collect());
                }
                if needs(*b) {
                    acc(*b, g.iter().zip(val(*a)).map(|(go, x)| go * x).collect());
                }
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                if needs(*a) {
                    acc(*a, g.iter().zip(y).map(|(go, yv)| go / yv).collect());
                }
                if needs(*b) {
                    let gb = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(go, (xv, yv))| -go * xv / (yv * yv))
                        .collect();
                    acc(*b, gb);
                }
            }
            Op::Affine { input, scale } => {
                if needs(*input) {
                    acc(*input, g.iter().map(|go| go * scale).collect());
                }
            }
            Op::Log { input, floor } => {
                if needs(*input) {
                    let gin = g
                        .iter()
                        .zip(val(*input))
                        .map(|(go, &x)| if x > *floor { go / x } else { 0.0 })
                        .collect();
                    acc(*input, gin);
                }
            }
            Op::Sqrt(input) => {
                if needs(*input) {
                    let gin = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(go, y)| go / (2.0 * y))
                        .collect();
                    acc(*input, gin);
                }
            }
            Op::Sum(input) => {
                if needs(*input) {
                    acc(*input, vec![g[0]; self.nodes[input.0].value.len()]);
                }
            }
            Op::Expand(input) => {
                if needs(*input) {
                    acc(*input, vec![g.iter().sum()]);
                }
            }
            Op::ScaleChannels { input, gate, plane } => {
                let (x, s) = (val(*input), val(*gate));
                if needs(*input) {
                    let gin = g
                        .chunks(*plane)
                        .zip(s)
                        .flat_map(|(gc, &sc)| gc.iter().map(move |go| go * sc))
                        .collect();
                    acc(*input, gin);
                }
                if needs(*gate) {
                    let gs = g
                        .chunks(*plane)
                        .zip(x.chunks(*plane))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*gate, gs);
                }
            }
            Op::RepeatChannels { input, times } => {
                if needs(*input) {
                    let plane = g.len() / times;
                    let mut gin = vec![0.0; plane];
                    for chunk in g.chunks(plane) {
                        for (dst, go) in gin.iter_mut().zip(chunk) {
                            *dst += go;
                        }
                    }
                    acc(*input, gin);
                }
            }
            Op::ConcatChannels(a, b) => {
                let split = self.nodes[a.0].value.len();
                if needs(*a) {
                    acc(*a, g[..split].to_vec());
                }
                if needs(*b) {
                    acc(*b, g[split..].to_vec());
                }
            }
            Op::Reshape(input) => {
                if needs(*input) {
                    acc(*input, g.to_vec());
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, contrib: &[f64]) {
    debug_assert_eq!(contrib.len(), len);
    match &mut grads[v.0] {
        Some(existing) => {
            for (dst, c) in existing.iter_mut().zip(contrib) {
                *dst += c;
            }
        }
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

/// Gradients of every trainable leaf after a backward sweep.
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a trainable leaf; `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Tensor> {
        self.leaves.get_mut(v.0).and_then(Option::take)
    }
}
