//! Forward implementations of the differentiable operation set.
//!
//! Every op validates shapes, computes its value eagerly, and records an
//! [`Op`] node so the backward pass can replay the chain rule. Binary
//! elementwise ops broadcast with numpy semantics (shapes aligned at the
//! trailing dimension; a dimension of 1 stretches).

use super::{Op, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Broadcasting helpers
// ---------------------------------------------------------------------------

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![1usize; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Dimension(format!(
                    "shapes {a:?} and {b:?} are not broadcast-compatible"
                )))
            }
        };
    }
    Ok(out)
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

/// Materialize `data` (of `shape`) broadcast to `target` (same rank or less).
pub(crate) fn expand_to(data: &[f64], shape: &[usize], target: &[usize]) -> Vec<f64> {
    if shape == target {
        return data.to_vec();
    }
    let rank = target.len();
    // Effective strides in target coordinates; 0 where the source dim is 1.
    let src_strides = row_major_strides(shape);
    let mut strides = vec![0usize; rank];
    for (i, stride) in strides.iter_mut().enumerate() {
        if i + shape.len() >= rank {
            let si = i + shape.len() - rank;
            *stride = if shape[si] == 1 { 0 } else { src_strides[si] };
        }
    }
    let numel: usize = target.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..numel {
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < target[d] {
                break;
            }
            src -= strides[d] * target[d];
            idx[d] = 0;
        }
    }
    out
}

/// Sum-reduce a buffer shaped `from` down to `target` (inverse of broadcast).
pub(crate) fn reduce_to(data: &[f64], from: &[usize], target: &[usize]) -> Vec<f64> {
    if from == target {
        return data.to_vec();
    }
    let rank = from.len();
    let dst_strides = row_major_strides(target);
    let mut strides = vec![0usize; rank];
    for (i, stride) in strides.iter_mut().enumerate() {
        if i + target.len() >= rank {
            let ti = i + target.len() - rank;
            *stride = if target[ti] == 1 { 0 } else { dst_strides[ti] };
        }
    }
    let mut out = vec![0.0; target.iter().product()];
    let mut idx = vec![0usize; rank];
    let mut dst = 0usize;
    for &v in data {
        out[dst] += v;
        for d in (0..rank).rev() {
            idx[d] += 1;
            dst += strides[d];
            if idx[d] < from[d] {
                break;
            }
            dst -= strides[d] * from[d];
            idx[d] = 0;
        }
    }
    out
}

fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Ok((a.shape().to_vec(), data));
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let ea = expand_to(a.data(), a.shape(), &shape);
    let eb = expand_to(b.data(), b.shape(), &shape);
    let data = ea.iter().zip(&eb).map(|(&x, &y)| f(x, y)).collect();
    Ok((shape, data))
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic and activations
// ---------------------------------------------------------------------------

/// Activation selector mirroring the operation contract; the typed methods
/// (`Tensor::gelu` etc.) are the primary API.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Gelu,
    Sigmoid,
    Relu,
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Self::Gelu),
            "sigmoid" => Ok(Self::Sigmoid),
            "relu" => Ok(Self::Relu),
            other => Err(Error::Config(format!("unknown activation kind '{other}'"))),
        }
    }
}

pub fn activation(kind: ActivationKind, x: &Tensor) -> Tensor {
    match kind {
        ActivationKind::Gelu => x.gelu(),
        ActivationKind::Sigmoid => x.sigmoid(),
        ActivationKind::Relu => x.relu(),
    }
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = binary(self, other, |x, y| x + y)?;
        Ok(Tensor::from_op(shape, data, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = binary(self, other, |x, y| x - y)?;
        Ok(Tensor::from_op(shape, data, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = binary(self, other, |x, y| x * y)?;
        Ok(Tensor::from_op(shape, data, Op::Mul(self.clone(), other.clone())))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = binary(self, other, |x, y| x / y)?;
        Ok(Tensor::from_op(shape, data, Op::Div(self.clone(), other.clone())))
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x + s).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::AddScalar(self.clone()))
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x * s).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::MulScalar(self.clone(), s))
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|&x| x.max(0.0)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Relu(self.clone()))
    }

    pub fn gelu(&self) -> Tensor {
        let data = self.data().iter().map(|&x| gelu_scalar(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Gelu(self.clone()))
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.data().iter().map(|&x| sigmoid_scalar(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Sigmoid(self.clone()))
    }

    pub fn abs(&self) -> Tensor {
        let data = self.data().iter().map(|&x| x.abs()).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Abs(self.clone()))
    }

    /// Elementwise square root. The derivative at exactly 0 is taken as 0
    /// (subgradient choice) so zero-valued band maps do not poison training.
    pub fn sqrt(&self) -> Result<Tensor> {
        if self.data().iter().any(|&x| x < 0.0) {
            return Err(Error::Numerical(
                "sqrt of negative value".to_string(),
            ));
        }
        let data = self.data().iter().map(|&x| x.sqrt()).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Sqrt(self.clone())))
    }

    pub fn ln(&self) -> Result<Tensor> {
        if self.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Numerical(
                "ln requires strictly positive input".to_string(),
            ));
        }
        let data = self.data().iter().map(|&x| x.ln()).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Ln(self.clone())))
    }

    pub fn exp(&self) -> Tensor {
        let data = self.data().iter().map(|&x| x.exp()).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Exp(self.clone()))
    }
}

// ---------------------------------------------------------------------------
// Convolution family
// ---------------------------------------------------------------------------

impl Tensor {
    /// 2-D cross-correlation. Input H×W×C_in, kernel k×k×C_in×C_out,
    /// zero-padding `padding` on all sides. Output spatial dims are
    /// floor((H + 2·padding − k)/stride) + 1.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (h, w, ci) = self.hwc()?;
        let kshape = kernel.shape();
        if kshape.len() != 4 || kshape[0] != kshape[1] {
            return Err(Error::Dimension(format!(
                "kernel must be k×k×Cin×Cout, got {kshape:?}"
            )));
        }
        let (k, kci, co) = (kshape[0], kshape[2], kshape[3]);
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv2d kernel size must be odd, got {k}")));
        }
        if kci != ci {
            return Err(Error::Dimension(format!(
                "kernel expects {kci} input channels, feature map has {ci}"
            )));
        }
        if stride < 1 {
            return Err(Error::Contract("conv2d stride must be ≥ 1".to_string()));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::Dimension(format!(
                "kernel {k}×{k} exceeds padded input {}×{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (w + 2 * padding - k) / stride + 1;
        let data = conv2d_forward(self.data(), h, w, ci, kernel.data(), k, co, stride, padding, ho, wo);
        Ok(Tensor::from_op(
            vec![ho, wo, co],
            data,
            Op::Conv2d {
                input: self.clone(),
                kernel: kernel.clone(),
                stride,
                padding,
            },
        ))
    }

    /// Transposed convolution used for learned upsampling: kernel size is
    /// 2·factor, stride is factor, implicit padding factor/2, so output
    /// spatial dims are exactly factor× the input's.
    pub fn conv_transpose2d(&self, kernel: &Tensor, factor: usize) -> Result<Tensor> {
        let (h, w, ci) = self.hwc()?;
        if factor != 2 && factor != 4 {
            return Err(Error::Contract(format!(
                "transposed-conv factor must be 2 or 4, got {factor}"
            )));
        }
        let kshape = kernel.shape();
        let k = 2 * factor;
        if kshape.len() != 4 || kshape[0] != k || kshape[1] != k {
            return Err(Error::Dimension(format!(
                "transposed-conv kernel must be {k}×{k}×Cin×Cout, got {kshape:?}"
            )));
        }
        if kshape[2] != ci {
            return Err(Error::Dimension(format!(
                "kernel expects {} input channels, feature map has {ci}",
                kshape[2]
            )));
        }
        let co = kshape[3];
        let (ho, wo) = (h * factor, w * factor);
        let data = conv_transpose2d_forward(self.data(), h, w, ci, kernel.data(), factor, co);
        Ok(Tensor::from_op(
            vec![ho, wo, co],
            data,
            Op::ConvTranspose2d {
                input: self.clone(),
                kernel: kernel.clone(),
                factor,
            },
        ))
    }

    /// Max pooling over non-overlapping factor×factor windows.
    pub fn max_pool(&self, factor: usize) -> Result<Tensor> {
        let (h, w, c) = self.hwc()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Dimension(format!(
                "maxpool factor {factor} does not divide {h}×{w}"
            )));
        }
        let (ho, wo) = (h / factor, w / factor);
        let src = self.data();
        let mut out = vec![0.0; ho * wo * c];
        let mut argmax = vec![0u32; ho * wo * c];
        for oi in 0..ho {
            for oj in 0..wo {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for di in 0..factor {
                        for dj in 0..factor {
                            let idx = ((oi * factor + di) * w + (oj * factor + dj)) * c + ch;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (oi * wo + oj) * c + ch;
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![ho, wo, c],
            out,
            Op::MaxPool {
                input: self.clone(),
                argmax,
            },
        ))
    }

    /// Nearest-neighbour resize to an arbitrary spatial target; source index
    /// is floor(i·H_src/H_dst), which is exact duplication/subsampling for
    /// integer ratios.
    pub fn resize_nearest(&self, th: usize, tw: usize) -> Result<Tensor> {
        let (h, w, c) = self.hwc()?;
        if th == 0 || tw == 0 {
            return Err(Error::Dimension("resize target must be positive".to_string()));
        }
        let src = self.data();
        let mut out = vec![0.0; th * tw * c];
        for i in 0..th {
            let si = i * h / th;
            for j in 0..tw {
                let sj = j * w / tw;
                let sbase = (si * w + sj) * c;
                let obase = (i * tw + j) * c;
                out[obase..obase + c].copy_from_slice(&src[sbase..sbase + c]);
            }
        }
        Ok(Tensor::from_op(
            vec![th, tw, c],
            out,
            Op::ResizeNearest(self.clone()),
        ))
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    input: &[f64],
    h: usize,
    w: usize,
    ci: usize,
    kernel: &[f64],
    k: usize,
    co: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; ho * wo * co];
    for oi in 0..ho {
        for oj in 0..wo {
            let obase = (oi * wo + oj) * co;
            let orow = &mut out[obase..obase + co];
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
                        let v = input[ibase + ch];
                        let krow = &kernel[kbase + ch * co..kbase + (ch + 1) * co];
                        for (o, &kv) in orow.iter_mut().zip(krow) {
                            *o += v * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_transpose2d_forward(
    input: &[f64],
    h: usize,
    w: usize,
    ci: usize,
    kernel: &[f64],
    factor: usize,
    co: usize,
) -> Vec<f64> {
    let k = 2 * factor;
    let pad = factor / 2;
    let (ho, wo) = (h * factor, w * factor);
    let mut out = vec![0.0; ho * wo * co];
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
                    let obase = (oi * wo + oj) * co;
                    let kbase = (ki * k + kj) * ci * co;
                    let orow = &mut out[obase..obase + co];
                    for ch in 0..ci {
                        let v = input[ibase + ch];
                        let krow = &kernel[kbase + ch * co..kbase + (ch + 1) * co];
                        for (o, &kv) in orow.iter_mut().zip(krow) {
                            *o += v * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Resample dispatcher
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleDirection {
    Up,
    Down,
}

/// Resampling strategy: learned transposed conv (up), max pooling (down) or
/// parameter-free nearest neighbour (either direction).
pub enum ResampleMode<'a> {
    TransposedConv(&'a Tensor),
    MaxPool,
    Nearest,
}

pub fn resample(
    x: &Tensor,
    factor: usize,
    direction: ResampleDirection,
    mode: ResampleMode,
) -> Result<Tensor> {
    if factor != 2 && factor != 4 {
        return Err(Error::Contract(format!(
            "resample factor must be 2 or 4, got {factor}"
        )));
    }
    let (h, w, _) = x.hwc()?;
    match (direction, mode) {
        (ResampleDirection::Up, ResampleMode::TransposedConv(kernel)) => {
            x.conv_transpose2d(kernel, factor)
        }
        (ResampleDirection::Up, ResampleMode::Nearest) => x.resize_nearest(h * factor, w * factor),
        (ResampleDirection::Down, ResampleMode::MaxPool) => x.max_pool(factor),
        (ResampleDirection::Down, ResampleMode::Nearest) => {
            if h % factor != 0 || w % factor != 0 {
                return Err(Error::Dimension(format!(
                    "downsample factor {factor} does not divide {h}×{w}"
                )));
            }
            x.resize_nearest(h / factor, w / factor)
        }
        (ResampleDirection::Up, ResampleMode::MaxPool) => Err(Error::Contract(
            "maxpool is a downsampling mode".to_string(),
        )),
        (ResampleDirection::Down, ResampleMode::TransposedConv(_)) => Err(Error::Contract(
            "transposed conv is an upsampling mode".to_string(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Reductions and structure
// ---------------------------------------------------------------------------

impl Tensor {
    /// Per-pixel maximum across channels: H×W×C → H×W×1.
    pub fn channel_max(&self) -> Result<Tensor> {
        let (h, w, c) = self.hwc()?;
        let src = self.data();
        let mut out = vec![0.0; h * w];
        let mut argmax = vec![0u32; h * w];
        for p in 0..h * w {
            let base = p * c;
            let mut best = src[base];
            let mut best_c = 0usize;
            for ch in 1..c {
                if src[base + ch] > best {
                    best = src[base + ch];
                    best_c = ch;
                }
            }
            out[p] = best;
            argmax[p] = best_c as u32;
        }
        Ok(Tensor::from_op(
            vec![h, w, 1],
            out,
            Op::ChannelMax {
                input: self.clone(),
                argmax,
            },
        ))
    }

    /// Mean over the spatial grid per channel: H×W×C → 1×1×C.
    pub fn spatial_mean(&self) -> Result<Tensor> {
        let (h, w, c) = self.hwc()?;
        let src = self.data();
        let mut out = vec![0.0; c];
        for p in 0..h * w {
            for ch in 0..c {
                out[ch] += src[p * c + ch];
            }
        }
        let inv = 1.0 / (h * w) as f64;
        for v in &mut out {
            *v *= inv;
        }
        Ok(Tensor::from_op(
            vec![1, 1, c],
            out,
            Op::SpatialMean(self.clone()),
        ))
    }

    /// Sum of all elements (scalar of shape [1]).
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![1], vec![s], Op::Sum(self.clone()))
    }

    /// Mean of all elements (scalar of shape [1]).
    pub fn mean(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel() as f64;
        Tensor::from_op(vec![1], vec![s / n], Op::Mean(self.clone()))
    }

    /// Top-left crop of a rank-3 map to `th`×`tw` (used to undo pad-to-even).
    pub fn crop(&self, th: usize, tw: usize) -> Result<Tensor> {
        let (h, w, c) = self.hwc()?;
        if th > h || tw > w || th == 0 || tw == 0 {
            return Err(Error::Dimension(format!(
                "crop {th}×{tw} outside source {h}×{w}"
            )));
        }
        let src = self.data();
        let mut out = Vec::with_capacity(th * tw * c);
        for i in 0..th {
            let base = i * w * c;
            out.extend_from_slice(&src[base..base + tw * c]);
        }
        Ok(Tensor::from_op(vec![th, tw, c], out, Op::Crop(self.clone())))
    }

    /// Pad the bottom row / right column with their edge copies ("symmetric"
    /// half-sample reflection) until both spatial dims are even.
    pub fn pad_reflect_even(&self) -> Result<Tensor> {
        let (h, w, c) = self.hwc()?;
        let (ph, pw) = (h + h % 2, w + w % 2);
        if (ph, pw) == (h, w) {
            // Recorded anyway so the graph shape stays uniform.
            let data = self.data().to_vec();
            return Ok(Tensor::from_op(
                vec![h, w, c],
                data,
                Op::PadReflectEven(self.clone()),
            ));
        }
        let src = self.data();
        let mut out = vec![0.0; ph * pw * c];
        for i in 0..ph {
            let si = i.min(h - 1);
            for j in 0..pw {
                let sj = j.min(w - 1);
                let sbase = (si * w + sj) * c;
                let obase = (i * pw + j) * c;
                out[obase..obase + c].copy_from_slice(&src[sbase..sbase + c]);
            }
        }
        Ok(Tensor::from_op(
            vec![ph, pw, c],
            out,
            Op::PadReflectEven(self.clone()),
        ))
    }
}

/// Concatenate tensors of equal rank along `axis`; all other dims must match.
pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
    if tensors.is_empty() {
        return Err(Error::Contract("concat requires at least one tensor".to_string()));
    }
    let rank = tensors[0].rank();
    if axis >= rank {
        return Err(Error::Dimension(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    let mut out_shape = tensors[0].shape().to_vec();
    out_shape[axis] = 0;
    for t in tensors {
        if t.rank() != rank {
            return Err(Error::Dimension("concat rank mismatch".to_string()));
        }
        for (d, (&a, &b)) in t.shape().iter().zip(&out_shape).enumerate() {
            if d != axis && a != b {
                return Err(Error::Dimension(format!(
                    "concat dim {d} mismatch: {a} vs {b}"
                )));
            }
        }
        out_shape[axis] += t.shape()[axis];
    }
    let prefix: usize = out_shape[..axis].iter().product();
    let suffix: usize = out_shape[axis + 1..].iter().product();
    let numel: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(numel);
    for p in 0..prefix {
        for t in tensors {
            let chunk = t.shape()[axis] * suffix;
            let base = p * chunk;
            out.extend_from_slice(&t.data()[base..base + chunk]);
        }
    }
    let owned: Vec<Tensor> = tensors.iter().map(|t| (*t).clone()).collect();
    Ok(Tensor::from_op(
        out_shape,
        out,
        Op::Concat {
            inputs: owned,
            axis,
        },
    ))
}

// ---------------------------------------------------------------------------
// Single-level orthonormal Haar transform
// ---------------------------------------------------------------------------

/// Wavelet subband selector. LH carries vertical detail, HL horizontal,
/// HH diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Ll,
    Lh,
    Hl,
    Hh,
}

impl Band {
    /// Analysis weights for the 2×2 block (a, b, c, d) =
    /// (top-left, top-right, bottom-left, bottom-right); orthonormal rows.
    pub(crate) fn coeffs(self) -> [f64; 4] {
        match self {
            Band::Ll => [0.5, 0.5, 0.5, 0.5],
            Band::Lh => [0.5, 0.5, -0.5, -0.5],
            Band::Hl => [0.5, -0.5, 0.5, -0.5],
            Band::Hh => [0.5, -0.5, -0.5, 0.5],
        }
    }
}

impl Tensor {
    /// One subband of the single-level orthonormal Haar transform.
    /// Requires even spatial dims (use [`Tensor::pad_reflect_even`] first).
    pub fn haar_band(&self, band: Band) -> Result<Tensor> {
        let (h, w, c) = self.hwc()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!(
                "haar transform requires even spatial dims, got {h}×{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.data();
        let [ca, cb, cc, cd] = band.coeffs();
        let mut out = vec![0.0; ho * wo * c];
        for i in 0..ho {
            for j in 0..wo {
                let a = (2 * i * w + 2 * j) * c;
                let b = a + c;
                let cidx = a + w * c;
                let d = cidx + c;
                let obase = (i * wo + j) * c;
                for ch in 0..c {
                    out[obase + ch] =
                        ca * src[a + ch] + cb * src[b + ch] + cc * src[cidx + ch] + cd * src[d + ch];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![ho, wo, c],
            out,
            Op::HaarBand {
                input: self.clone(),
                band,
            },
        ))
    }
}

/// Exact inverse of the single-level orthonormal Haar transform.
pub fn haar_inverse(ll: &Tensor, lh: &Tensor, hl: &Tensor, hh: &Tensor) -> Result<Tensor> {
    let (ho, wo, c) = ll.hwc()?;
    for t in [lh, hl, hh] {
        if t.shape() != ll.shape() {
            return Err(Error::Dimension(format!(
                "band shape mismatch: {:?} vs {:?}",
                t.shape(),
                ll.shape()
            )));
        }
    }
    let (h, w) = (2 * ho, 2 * wo);
    let mut out = vec![0.0; h * w * c];
    let (sll, slh, shl, shh) = (ll.data(), lh.data(), hl.data(), hh.data());
    for i in 0..ho {
        for j in 0..wo {
            let sbase = (i * wo + j) * c;
            let a = (2 * i * w + 2 * j) * c;
            let b = a + c;
            let cidx = a + w * c;
            let d = cidx + c;
            for ch in 0..c {
                let (vll, vlh, vhl, vhh) = (
                    sll[sbase + ch],
                    slh[sbase + ch],
                    shl[sbase + ch],
                    shh[sbase + ch],
                );
                out[a + ch] = 0.5 * (vll + vlh + vhl + vhh);
                out[b + ch] = 0.5 * (vll + vlh - vhl - vhh);
                out[cidx + ch] = 0.5 * (vll - vlh + vhl - vhh);
                out[d + ch] = 0.5 * (vll - vlh - vhl + vhh);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![h, w, c],
        out,
        Op::HaarInverse {
            ll: ll.clone(),
            lh: lh.clone(),
            hl: hl.clone(),
            hh: hh.clone(),
        },
    ))
}
