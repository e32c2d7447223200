//! Immediate-mode versions of the tape operations, for inference without
//! recording a graph.

use super::kernels::{self, ConvGeometry};
use super::tape::Activation;
use super::Tensor;
use crate::error::{Error, Result};

pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, dilation: usize) -> Result<Tensor> {
    let (c_in, height, width) = input.chw()?;
    let [c_out, k_in, kh, kw] = kernel.shape()[..] else {
        return Err(Error::shape("conv2d", format!("kernel must be rank 4, got {:?}", kernel.shape())));
    };
    if k_in != c_in || kh != kw || dilation < 1 {
        return Err(Error::shape(
            "conv2d",
            format!("input {:?} with kernel {:?}, dilation {dilation}", input.shape(), kernel.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {c_out} outputs", b.shape())));
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
    let out = kernels::conv2d_forward(geom, input.data(), kernel.data(), bias.map(|b| b.data()));
    Tensor::new(&[c_out, height, width], out)
}

pub fn max_pool2d(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if h < 2 || w < 2 {
        return Err(Error::shape("max_pool2d", format!("{h}x{w} is smaller than the 2x2 window")));
    }
    let (out, _) = kernels::max_pool2_forward(input.data(), c, h, w);
    Tensor::new(&[c, h / 2, w / 2], out)
}

pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [m, n] = weight.shape()[..] else {
        return Err(Error::shape("linear", "weight must be rank 2"));
    };
    if n != input.len() || bias.shape() != [m] {
        return Err(Error::shape(
            "linear",
            format!("input length {} with weight {:?}, bias {:?}", input.len(), weight.shape(), bias.shape()),
        ));
    }
    Tensor::new(&[m], kernels::matvec(weight.data(), input.data(), bias.data()))
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    input.map(|x| kind.apply(x))
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let plane = (h * w) as f64;
    let means = kernels::plane_sums(input.data(), h * w).into_iter().map(|s| s / plane).collect();
    Tensor::new(&[c], means)
}

pub fn scale_channels(input: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if gate.shape() != [c] {
        return Err(Error::shape("scale_channels", format!("gate {:?} for {c} channels", gate.shape())));
    }
    let data = input
        .data()
        .chunks(h * w)
        .zip(gate.data())
        .flat_map(|(ch, &s)| ch.iter().map(move |v| v * s))
        .collect();
    Tensor::new(&[c, h, w], data)
}

pub fn repeat_channels(input: &Tensor, times: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if c != 1 {
        return Err(Error::shape("repeat_channels", "input must have one channel"));
    }
    let data = (0..times).flat_map(|_| input.data().iter().copied()).collect();
    Tensor::new(&[times, h, w], data)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape("concat_channels", format!("{ha}x{wa} vs {hb}x{wb}")));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(&[ca + cb, ha, wa], data)
}

pub fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("elementwise", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data)
}
