//! Reverse-mode differentiation over the recorded op graph.
//!
//! Each non-leaf tensor holds the [`Op`] that produced it, with owning
//! handles to its inputs, so the graph stays alive exactly as long as some
//! result does. [`backward`] walks the graph in reverse topological order
//! (deterministic: construction order ids), accumulates vector-Jacobian
//! products, and deposits gradients on every reachable `requires_grad` leaf.
//! Subgraphs that contain no such leaf are skipped entirely.

use super::ops::{expand_to, gelu_grad_scalar, reduce_to};
use super::{Band, Inner, Tensor};
use crate::error::{Error, Result};
use std::collections::{HashMap, HashSet};

pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    AddScalar(Tensor),
    MulScalar(Tensor, f64),
    Relu(Tensor),
    Gelu(Tensor),
    Sigmoid(Tensor),
    Abs(Tensor),
    Sqrt(Tensor),
    Ln(Tensor),
    Exp(Tensor),
    Conv2d {
        input: Tensor,
        kernel: Tensor,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: Tensor,
        kernel: Tensor,
        factor: usize,
    },
    MaxPool {
        input: Tensor,
        argmax: Vec<u32>,
    },
    ResizeNearest(Tensor),
    ChannelMax {
        input: Tensor,
        argmax: Vec<u32>,
    },
    SpatialMean(Tensor),
    Sum(Tensor),
    Mean(Tensor),
    Concat {
        inputs: Vec<Tensor>,
        axis: usize,
    },
    Crop(Tensor),
    PadReflectEven(Tensor),
    HaarBand {
        input: Tensor,
        band: Band,
    },
    HaarInverse {
        ll: Tensor,
        lh: Tensor,
        hl: Tensor,
        hh: Tensor,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::Relu(a)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::Abs(a)
            | Op::Sqrt(a)
            | Op::Ln(a)
            | Op::Exp(a)
            | Op::ResizeNearest(a)
            | Op::SpatialMean(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Crop(a)
            | Op::PadReflectEven(a) => vec![a],
            Op::Conv2d { input, kernel, .. } | Op::ConvTranspose2d { input, kernel, .. } => {
                vec![input, kernel]
            }
            Op::MaxPool { input, .. } | Op::ChannelMax { input, .. } | Op::HaarBand { input, .. } => {
                vec![input]
            }
            Op::Concat { inputs, .. } => inputs.iter().collect(),
            Op::HaarInverse { ll, lh, hl, hh } => vec![ll, lh, hl, hh],
        }
    }
}

struct GradSink {
    grads: HashMap<u64, Vec<f64>>,
}

impl GradSink {
    fn add(&mut self, target: &Tensor, contribution: Vec<f64>) {
        if !target.inner.needs_grad {
            return;
        }
        match self.grads.get_mut(&target.id()) {
            Some(buf) => {
                for (g, c) in buf.iter_mut().zip(&contribution) {
                    *g += c;
                }
            }
            None => {
                self.grads.insert(target.id(), contribution);
            }
        }
    }
}

/// Populate gradients of all reachable `requires_grad` leaves of `loss`.
///
/// Gradients accumulate across calls; clear leaves with [`Tensor::zero_grad`]
/// between passes to make repeated calls idempotent.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let order = topo_order(loss);
    let mut sink = GradSink {
        grads: HashMap::new(),
    };
    sink.grads.insert(loss.id(), vec![1.0]);
    for node in order.iter().rev() {
        let Some(gout) = sink.grads.remove(&node.id()) else {
            continue;
        };
        if node.inner.requires_grad {
            node.accumulate_grad(&gout);
        }
        if let Some(op) = &node.inner.op {
            op_backward(op, &node.inner, &gout, &mut sink);
        }
    }
    Ok(())
}

/// Post-order over the graph (inputs before outputs), pruned to subgraphs
/// that can reach a `requires_grad` leaf. Iterative to keep stack use flat.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(op) = &node.inner.op {
            for input in op.inputs() {
                if input.inner.needs_grad && !visited.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

fn op_backward(op: &Op, out: &Inner, gout: &[f64], sink: &mut GradSink) {
    match op {
        Op::Add(a, b) => {
            if a.inner.needs_grad {
                sink.add(a, reduce_to(gout, &out.shape, a.shape()));
            }
            if b.inner.needs_grad {
                sink.add(b, reduce_to(gout, &out.shape, b.shape()));
            }
        }
        Op::Sub(a, b) => {
            if a.inner.needs_grad {
                sink.add(a, reduce_to(gout, &out.shape, a.shape()));
            }
            if b.inner.needs_grad {
                let neg: Vec<f64> = gout.iter().map(|g| -g).collect();
                sink.add(b, reduce_to(&neg, &out.shape, b.shape()));
            }
        }
        Op::Mul(a, b) => {
            if a.inner.needs_grad {
                let eb = expand_to(b.data(), b.shape(), &out.shape);
                let ga: Vec<f64> = gout.iter().zip(&eb).map(|(g, y)| g * y).collect();
                sink.add(a, reduce_to(&ga, &out.shape, a.shape()));
            }
            if b.inner.needs_grad {
                let ea = expand_to(a.data(), a.shape(), &out.shape);
                let gb: Vec<f64> = gout.iter().zip(&ea).map(|(g, x)| g * x).collect();
                sink.add(b, reduce_to(&gb, &out.shape, b.shape()));
            }
        }
        Op::Div(a, b) => {
            let eb = expand_to(b.data(), b.shape(), &out.shape);
            if a.inner.needs_grad {
                let ga: Vec<f64> = gout.iter().zip(&eb).map(|(g, y)| g / y).collect();
                sink.add(a, reduce_to(&ga, &out.shape, a.shape()));
            }
            if b.inner.needs_grad {
                let ea = expand_to(a.data(), a.shape(), &out.shape);
                let gb: Vec<f64> = gout
                    .iter()
                    .zip(&ea)
                    .zip(&eb)
                    .map(|((g, x), y)| -g * x / (y * y))
                    .collect();
                sink.add(b, reduce_to(&gb, &out.shape, b.shape()));
            }
        }
        Op::AddScalar(a) => sink.add(a, gout.to_vec()),
        Op::MulScalar(a, s) => {
            sink.add(a, gout.iter().map(|g| g * s).collect());
        }
        Op::Relu(a) => {
            let g = a
                .data()
                .iter()
                .zip(gout)
                .map(|(&x, g)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            sink.add(a, g);
        }
        Op::Gelu(a) => {
            let g = a
                .data()
                .iter()
                .zip(gout)
                .map(|(&x, g)| g * gelu_grad_scalar(x))
                .collect();
            sink.add(a, g);
        }
        Op::Sigmoid(a) => {
            let g = out
                .data
                .iter()
                .zip(gout)
                .map(|(&y, g)| g * y * (1.0 - y))
                .collect();
            sink.add(a, g);
        }
        Op::Abs(a) => {
            let g = a
                .data()
                .iter()
                .zip(gout)
                .map(|(&x, g)| {
                    // Subgradient 0 at the kink.
                    if x > 0.0 {
                        *g
                    } else if x < 0.0 {
                        -*g
                    } else {
                        0.0
                    }
                })
                .collect();
            sink.add(a, g);
        }
        Op::Sqrt(a) => {
            let g = out
                .data
                .iter()
                .zip(gout)
                .map(|(&y, g)| if y > 0.0 { 0.5 * g / y } else { 0.0 })
                .collect();
            sink.add(a, g);
        }
        Op::Ln(a) => {
            let g = a.data().iter().zip(gout).map(|(&x, g)| g / x).collect();
            sink.add(a, g);
        }
        Op::Exp(a) => {
            let g = out.data.iter().zip(gout).map(|(&y, g)| g * y).collect();
            sink.add(a, g);
        }
        Op::Conv2d {
            input,
            kernel,
            stride,
            padding,
        } => {
            conv2d_backward(input, kernel, *stride, *padding, &out.shape, gout, sink);
        }
        Op::ConvTranspose2d {
            input,
            kernel,
            factor,
        } => {
            conv_transpose2d_backward(input, kernel, *factor, gout, sink);
        }
        Op::MaxPool { input, argmax } => {
            let mut g = vec![0.0; input.numel()];
            for (o, &src) in argmax.iter().enumerate() {
                g[src as usize] += gout[o];
            }
            sink.add(input, g);
        }
        Op::ResizeNearest(input) => {
            let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let (th, tw) = (out.shape[0], out.shape[1]);
            let mut g = vec![0.0; input.numel()];
            for i in 0..th {
                let si = i * h / th;
                for j in 0..tw {
                    let sj = j * w / tw;
                    let sbase = (si * w + sj) * c;
                    let obase = (i * tw + j) * c;
                    for ch in 0..c {
                        g[sbase + ch] += gout[obase + ch];
                    }
                }
            }
            sink.add(input, g);
        }
        Op::ChannelMax { input, argmax } => {
            let c = input.shape()[2];
            let mut g = vec![0.0; input.numel()];
            for (p, &best_c) in argmax.iter().enumerate() {
                g[p * c + best_c as usize] += gout[p];
            }
            sink.add(input, g);
        }
        Op::SpatialMean(input) => {
            let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let inv = 1.0 / (h * w) as f64;
            let mut g = vec![0.0; input.numel()];
            for p in 0..h * w {
                for ch in 0..c {
                    g[p * c + ch] = gout[ch] * inv;
                }
            }
            sink.add(input, g);
        }
        Op::Sum(input) => {
            sink.add(input, vec![gout[0]; input.numel()]);
        }
        Op::Mean(input) => {
            let g = gout[0] / input.numel() as f64;
            sink.add(input, vec![g; input.numel()]);
        }
        Op::Concat { inputs, axis } => {
            let prefix: usize = out.shape[..*axis].iter().product();
            let suffix: usize = out.shape[*axis + 1..].iter().product();
            let out_chunk = out.shape[*axis] * suffix;
            let mut offset = 0usize;
            for input in inputs {
                let chunk = input.shape()[*axis] * suffix;
                if input.inner.needs_grad {
                    let mut g = Vec::with_capacity(input.numel());
                    for p in 0..prefix {
                        let base = p * out_chunk + offset;
                        g.extend_from_slice(&gout[base..base + chunk]);
                    }
                    sink.add(input, g);
                }
                offset += chunk;
            }
        }
        Op::Crop(input) => {
            let (w, c) = (input.shape()[1], input.shape()[2]);
            let (th, tw) = (out.shape[0], out.shape[1]);
            let mut g = vec![0.0; input.numel()];
            for i in 0..th {
                let obase = i * tw * c;
                let ibase = i * w * c;
                g[ibase..ibase + tw * c].copy_from_slice(&gout[obase..obase + tw * c]);
            }
            sink.add(input, g);
        }
        Op::PadReflectEven(input) => {
            let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let (ph, pw) = (out.shape[0], out.shape[1]);
            let mut g = vec![0.0; input.numel()];
            for i in 0..ph {
                let si = i.min(h - 1);
                for j in 0..pw {
                    let sj = j.min(w - 1);
                    let sbase = (si * w + sj) * c;
                    let obase = (i * pw + j) * c;
                    for ch in 0..c {
                        g[sbase + ch] += gout[obase + ch];
                    }
                }
            }
            sink.add(input, g);
        }
        Op::HaarBand { input, band } => {
            let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let (ho, wo) = (h / 2, w / 2);
            let [ca, cb, cc, cd] = band.coeffs();
            let mut g = vec![0.0; input.numel()];
            for i in 0..ho {
                for j in 0..wo {
                    let a = (2 * i * w + 2 * j) * c;
                    let b = a + c;
                    let cidx = a + w * c;
                    let d = cidx + c;
                    let obase = (i * wo + j) * c;
                    for ch in 0..c {
                        let go = gout[obase + ch];
                        g[a + ch] += ca * go;
                        g[b + ch] += cb * go;
                        g[cidx + ch] += cc * go;
                        g[d + ch] += cd * go;
                    }
                }
            }
            sink.add(input, g);
        }
        Op::HaarInverse { ll, lh, hl, hh } => {
            // Orthonormal transform: the VJP of the synthesis step is the
            // analysis step applied to the upstream gradient.
            let (ho, wo, c) = (ll.shape()[0], ll.shape()[1], ll.shape()[2]);
            let w = 2 * wo;
            for (band_tensor, band) in [(ll, Band::Ll), (lh, Band::Lh), (hl, Band::Hl), (hh, Band::Hh)] {
                if !band_tensor.inner.needs_grad {
                    continue;
                }
                let [ca, cb, cc, cd] = band.coeffs();
                let mut g = vec![0.0; band_tensor.numel()];
                for i in 0..ho {
                    for j in 0..wo {
                        let a = (2 * i * w + 2 * j) * c;
                        let b = a + c;
                        let cidx = a + w * c;
                        let d = cidx + c;
                        let sbase = (i * wo + j) * c;
                        for ch in 0..c {
                            g[sbase + ch] = ca * gout[a + ch]
                                + cb * gout[b + ch]
                                + cc * gout[cidx + ch]
                                + cd * gout[d + ch];
                        }
                    }
                }
                sink.add(band_tensor, g);
            }
        }
    }
}

fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
    gout: &[f64],
    sink: &mut GradSink,
) {
    let (h, w, ci) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, co) = (kernel.shape()[0], kernel.shape()[3]);
    let (ho, wo) = (out_shape[0], out_shape[1]);
    let idata = input.data();
    let kdata = kernel.data();
    let want_gi = input.inner.needs_grad;
    let want_gk = kernel.inner.needs_grad;
    let mut gi = if want_gi { vec![0.0; input.numel()] } else { Vec::new() };
    let mut gk = if want_gk { vec![0.0; kernel.numel()] } else { Vec::new() };
    for oi in 0..ho {
        for oj in 0..wo {
            let go = &gout[(oi * wo + oj) * co..(oi * wo + oj + 1) * co];
            for ki in 0..k {
                let ii = oi * stride + ki;
                if ii < padding || ii - padding >= h {
                    continue;
                }
                let ii = ii - padding;
                for kj in 0..k {
                    let jj = oj * stride + kj;
                    if jj < padding || jj - padding >= w {
                        continue;
                    }
                    let jj = jj - padding;
                    let ibase = (ii * w + jj) * ci;
                    let kbase = (ki * k + kj) * ci * co;
                    for ch in 0..ci {
                        let krow = &kdata[kbase + ch * co..kbase + (ch + 1) * co];
                        if want_gi {
                            let mut acc = 0.0;
                            for (g, &kv) in go.iter().zip(krow) {
                                acc += g * kv;
                            }
                            gi[ibase + ch] += acc;
                        }
                        if want_gk {
                            let iv = idata[ibase + ch];
                            let gkrow = &mut gk[kbase + ch * co..kbase + (ch + 1) * co];
                            for (gkv, &g) in gkrow.iter_mut().zip(go) {
                                *gkv += iv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    if want_gi {
        sink.add(input, gi);
    }
    if want_gk {
        sink.add(kernel, gk);
    }
}

fn conv_transpose2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    factor: usize,
    gout: &[f64],
    sink: &mut GradSink,
) {
    let (h, w, ci) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let co = kernel.shape()[3];
    let k = 2 * factor;
    let pad = factor / 2;
    let (ho, wo) = (h * factor, w * factor);
    let idata = input.data();
    let kdata = kernel.data();
    let want_gi = input.inner.needs_grad;
    let want_gk = kernel.inner.needs_grad;
    let mut gi = if want_gi { vec![0.0; input.numel()] } else { Vec::new() };
    let mut gk = if want_gk { vec![0.0; kernel.numel()] } else { Vec::new() };
    for i in 0..h {
        for j in 0..w {
            let ibase = (i * w + j) * ci;
            for ki in 0..k {
                let oi = i * factor + ki;
                if oi < pad || oi - pad >= ho {
                    continue;
                }
                let oi = oi - pad;
                for kj in 0..k {
                    let oj = j * factor + kj;
                    if oj < pad || oj - pad >= wo {
                        continue;
                    }
                    let oj = oj - pad;
                    let go = &gout[(oi * wo + oj) * co..(oi * wo + oj + 1) * co];
                    let kbase = (ki * k + kj) * ci * co;
                    for ch in 0..ci {
                        let krow = &kdata[kbase + ch * co..kbase + (ch + 1) * co];
                        if want_gi {
                            let mut acc = 0.0;
                            for (g, &kv) in go.iter().zip(krow) {
                                acc += g * kv;
                            }
                            gi[ibase + ch] += acc;
                        }
                        if want_gk {
                            let iv = idata[ibase + ch];
                            let gkrow = &mut gk[kbase + ch * co..kbase + (ch + 1) * co];
                            for (gkv, &g) in gkrow.iter_mut().zip(go) {
                                *gkv += iv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    if want_gi {
        sink.add(input, gi);
    }
    if want_gk {
        sink.add(kernel, gk);
    }
}
