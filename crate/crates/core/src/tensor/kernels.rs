//! Raw forward/backward loops over flat slices. Shape checking happens in the
//! tape; these functions trust their extents.

use rayon::prelude::*;

/// Below this many multiply-adds a conv runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    fn work(&self) -> usize {
        self.c_in * self.c_out * self.taps() * self.plane()
    }

    /// Spatial offset of tap `(i, j)` and the output rows/cols for which the
    /// shifted read stays inside the input.
    fn tap(&self, i: usize, j: usize) -> Option<Tap> {
        let half = (self.kernel / 2) as isize;
        let dy = (i as isize - half) * self.dilation as isize;
        let dx = (j as isize - half) * self.dilation as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        let y0 = (-dy).max(0);
        let y1 = (h - dy).min(h);
        let x0 = (-dx).max(0);
        let x1 = (w - dx).min(w);
        if y0 >= y1 || x0 >= x1 {
            return None;
        }
        Some(Tap {
            dy,
            dx,
            y0: y0 as usize,
            y1: y1 as usize,
            x0: x0 as usize,
            x1: x1 as usize,
        })
    }
}

#[derive(Clone, Copy)]
struct Tap {
    dy: isize,
    dx: isize,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

impl Tap {
    fn src(&self, y: usize, x: usize, width: usize) -> usize {
        let sy = (y as isize + self.dy) as usize;
        let sx = (x as isize + self.dx) as usize;
        sy * width + sx
    }
}

pub(crate) fn conv2d_forward(
    g: ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let plane = g.plane();
    let mut out = vec![0.0; g.c_out * plane];
    let body = |(co, out_c): (usize, &mut [f64])| {
        if let Some(b) = bias {
            out_c.fill(b[co]);
        }
        for ci in 0..g.c_in {
            let in_c = &input[ci * plane..(ci + 1) * plane];
            for i in 0..g.kernel {
                for j in 0..g.kernel {
                    let wv = kernel[((co * g.c_in + ci) * g.kernel + i) * g.kernel + j];
                    let Some(t) = g.tap(i, j) else { continue };
                    let n = t.x1 - t.x0;
                    for y in t.y0..t.y1 {
                        let s = t.src(y, t.x0, g.width);
                        let o = y * g.width + t.x0;
                        for (dst, src) in out_c[o..o + n].iter_mut().zip(&in_c[s..s + n]) {
                            *dst += wv * src;
                        }
                    }
                }
            }
        }
    };
    if g.work() >= PAR_THRESHOLD {
        out.par_chunks_mut(plane).enumerate().for_each(body);
    } else {
        out.chunks_mut(plane).enumerate().for_each(body);
    }
    out
}

pub(crate) fn conv2d_grad_input(g: ConvGeometry, kernel: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let plane = g.plane();
    let mut grad_in = vec![0.0; g.c_in * plane];
    let body = |(ci, gin): (usize, &mut [f64])| {
        for co in 0..g.c_out {
            let gout = &grad_out[co * plane..(co + 1) * plane];
            for i in 0..g.kernel {
                for j in 0..g.kernel {
                    let wv = kernel[((co * g.c_in + ci) * g.kernel + i) * g.kernel + j];
                    let Some(t) = g.tap(i, j) else { continue };
                    let n = t.x1 - t.x0;
                    for y in t.y0..t.y1 {
                        let s = t.src(y, t.x0, g.width);
                        let o = y * g.width + t.x0;
                        for (dst, src) in gin[s..s + n].iter_mut().zip(&gout[o..o + n]) {
                            *dst += wv * src;
                        }
                    }
                }
            }
        }
    };
    if g.work() >= PAR_THRESHOLD {
        grad_in.par_chunks_mut(plane).enumerate().for_each(body);
    } else {
        grad_in.chunks_mut(plane).enumerate().for_each(body);
    }
    grad_in
}

pub(crate) fn conv2d_grad_kernel(g: ConvGeometry, input: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let plane = g.plane();
    let per_out = g.c_in * g.taps();
    let mut grad_k = vec![0.0; g.c_out * per_out];
    let body = |(co, gk): (usize, &mut [f64])| {
        let gout = &grad_out[co * plane..(co + 1) * plane];
        for ci in 0..g.c_in {
            let in_c = &input[ci * plane..(ci + 1) * plane];
            for i in 0..g.kernel {
                for j in 0..g.kernel {
                    let Some(t) = g.tap(i, j) else { continue };
                    let n = t.x1 - t.x0;
                    let mut acc = 0.0;
                    for y in t.y0..t.y1 {
                        let s = t.src(y, t.x0, g.width);
                        let o = y * g.width + t.x0;
                        acc += gout[o..o + n]
                            .iter()
                            .zip(&in_c[s..s + n])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                    gk[(ci * g.kernel + i) * g.kernel + j] = acc;
                }
            }
        }
    };
    if g.work() >= PAR_THRESHOLD {
        grad_k.par_chunks_mut(per_out).enumerate().for_each(body);
    } else {
        grad_k.chunks_mut(per_out).enumerate().for_each(body);
    }
    grad_k
}

pub(crate) fn plane_sums(values: &[f64], plane: usize) -> Vec<f64> {
    values.chunks(plane).map(|c| c.iter().sum()).collect()
}

/// 2×2 stride-2 max pooling. Returns the pooled values and, per output cell,
/// the flat input index that won (first in scan order on ties).
pub(crate) fn max_pool2_forward(
    input: &[f64],
    channels: usize,
    height: usize,
    width: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut argmax = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * height * width;
        for y in 0..oh {
            for x in 0..ow {
                let mut best_idx = base + 2 * y * width + 2 * x;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * width + 2 * x + dx;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}

/// `weight · input + bias` for a row-major `[rows, cols]` weight.
pub(crate) fn matvec(weight: &[f64], input: &[f64], bias: &[f64]) -> Vec<f64> {
    let cols = input.len();
    weight
        .chunks(cols)
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}
