//! Multi-scale wavelet feature aggregation.
//!
//! Each encoder stage is decomposed with a single-level orthonormal Haar
//! transform. The low-frequency (LL) bands of all stages are fused into one
//! feature map that drives a five-scale pyramid and a salience/prompt head;
//! the high-frequency bands are condensed into directional magnitude and
//! energy maps, combined across scales by energy-weighted averaging, and
//! added back onto the encoder output so fine detail suppressed by
//! camouflage gets re-emphasized.
//!
//! Cross-scale grids: encoder stages have different resolutions and widths,
//! so band maps are nearest-resized to the largest participating grid before
//! any concatenation or sum, and the per-scale energy maps are reduced to a
//! single channel (channel mean) so scales with different widths are
//! commensurable.

use crate::error::{Error, Result};
use crate::tensor::{concat, haar_inverse, Band, ParamStore, Tensor};

/// One-level wavelet decomposition of a feature map.
///
/// All four bands have shape ⌈H/2⌉×⌈W/2⌉×C (odd inputs are edge-padded to
/// even before the transform; `orig_hw` records the pre-padding size so the
/// inverse can crop back).
pub struct WaveletBands {
    /// Encoder stage this decomposition belongs to (1..=4).
    pub scale_index: usize,
    /// Low-frequency approximation.
    pub ll: Tensor,
    /// Vertical detail.
    pub lh: Tensor,
    /// Horizontal detail.
    pub hl: Tensor,
    /// Diagonal detail.
    pub hh: Tensor,
    orig_hw: (usize, usize),
}

impl WaveletBands {
    /// Assemble bands directly (the normal constructor is [`dwt2`]).
    pub fn new(
        scale_index: usize,
        ll: Tensor,
        lh: Tensor,
        hl: Tensor,
        hh: Tensor,
        orig_hw: (usize, usize),
    ) -> Result<WaveletBands> {
        if !(1..=4).contains(&scale_index) {
            return Err(Error::Contract(format!(
                "scale index must be in 1..=4, got {scale_index}"
            )));
        }
        let (bh, bw, _) = ll.hwc()?;
        for t in [&lh, &hl, &hh] {
            if t.shape() != ll.shape() {
                return Err(Error::Dimension(format!(
                    "band shape mismatch: {:?} vs {:?}",
                    t.shape(),
                    ll.shape()
                )));
            }
        }
        let (oh, ow) = orig_hw;
        if oh.div_ceil(2) != bh || ow.div_ceil(2) != bw {
            return Err(Error::Dimension(format!(
                "bands of {bh}×{bw} cannot come from a {oh}×{ow} input"
            )));
        }
        Ok(WaveletBands {
            scale_index,
            ll,
            lh,
            hl,
            hh,
            orig_hw,
        })
    }

    /// Spatial size of the map the bands were computed from.
    pub fn orig_hw(&self) -> (usize, usize) {
        self.orig_hw
    }
}

/// Single-level orthonormal Haar decomposition of each channel.
///
/// Odd spatial dims are edge-padded to even first; the original size is
/// recorded so [`idwt2`] reconstructs the exact input.
pub fn dwt2(f: &Tensor, scale_index: usize) -> Result<WaveletBands> {
    let (h, w, _) = f.hwc()?;
    let padded = f.pad_reflect_even()?;
    WaveletBands::new(
        scale_index,
        padded.haar_band(Band::Ll)?,
        padded.haar_band(Band::Lh)?,
        padded.haar_band(Band::Hl)?,
        padded.haar_band(Band::Hh)?,
        (h, w),
    )
}

/// Exact inverse of [`dwt2`] (reconstruct, then crop away any padding).
pub fn idwt2(bands: &WaveletBands) -> Result<Tensor> {
    let full = haar_inverse(&bands.ll, &bands.lh, &bands.hl, &bands.hh)?;
    let (h, w) = bands.orig_hw;
    full.crop(h, w)
}

fn expect_four_scales(bands: &[WaveletBands]) -> Result<()> {
    if bands.len() != 4 {
        return Err(Error::Contract(format!(
            "expected decompositions of all four encoder stages, got {}",
            bands.len()
        )));
    }
    for (i, b) in bands.iter().enumerate() {
        if b.scale_index != i + 1 {
            return Err(Error::Contract(format!(
                "scale {} is missing: slot {i} holds scale {}",
                i + 1,
                b.scale_index
            )));
        }
    }
    Ok(())
}

/// Largest (h, w) over a set of band-sized maps.
fn largest_grid(maps: &[Tensor]) -> Result<(usize, usize)> {
    let mut best = (0usize, 0usize);
    for m in maps {
        let (h, w, _) = m.hwc()?;
        if h * w > best.0 * best.1 {
            best = (h, w);
        }
    }
    Ok(best)
}

/// Mean across channels: H×W×C → H×W×1, expressed as a constant 1×1
/// convolution so it stays differentiable without a dedicated op.
fn channel_mean(x: &Tensor) -> Result<Tensor> {
    let (_, _, c) = x.hwc()?;
    let ones = Tensor::full(&[1, 1, c, 1], 1.0)?;
    Ok(x.conv2d(&ones, 1, 0)?.mul_scalar(1.0 / c as f64))
}

// ---------------------------------------------------------------------------
// Low-frequency fusion
// ---------------------------------------------------------------------------

/// Parameter names used by [`lowfreq_fuse`].
pub const LOWFUSE_CAT_WEIGHT: &str = "lowfuse.cat.w";
pub const LOWFUSE_CAT_BIAS: &str = "lowfuse.cat.b";
pub const LOWFUSE_RES_WEIGHT: &str = "lowfuse.res.w";
pub const LOWFUSE_RES_BIAS: &str = "lowfuse.res.b";

/// Register fusion parameters: `stage_channels` are the widths of the four
/// encoder stages, `fused` the width of the fused map.
pub fn register_lowfreq_fuse(
    params: &mut ParamStore,
    stage_channels: &[usize; 4],
    fused: usize,
) -> Result<()> {
    let total: usize = stage_channels.iter().sum();
    params.add_uniform(
        LOWFUSE_CAT_WEIGHT,
        &[1, 1, total, fused],
        1.0 / (total as f64).sqrt(),
    )?;
    params.add_zeros(LOWFUSE_CAT_BIAS, &[1, 1, fused])?;
    params.add_uniform(
        LOWFUSE_RES_WEIGHT,
        &[3, 3, fused, fused],
        1.0 / (9.0 * fused as f64).sqrt(),
    )?;
    params.add_zeros(LOWFUSE_RES_BIAS, &[1, 1, fused])
}

/// Fuse the four LL bands into one low-frequency feature map.
///
/// Each LL is nearest-resized to the largest LL grid, the stack is
/// concatenated along channels and mixed by a 1×1 convolution, upsampled
/// (nearest) to `target_hw`, and refined by a residual 3×3 convolution:
/// out = Conv₃ₓ₃(F) + F.
pub fn lowfreq_fuse(
    bands: &[WaveletBands],
    params: &ParamStore,
    target_hw: (usize, usize),
) -> Result<Tensor> {
    expect_four_scales(bands)?;
    let lls: Vec<Tensor> = bands.iter().map(|b| b.ll.clone()).collect();
    let (gh, gw) = largest_grid(&lls)?;
    let resized: Vec<Tensor> = lls
        .iter()
        .map(|t| t.resize_nearest(gh, gw))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = resized.iter().collect();
    let stacked = concat(&refs, 2)?;
    let mixed = stacked
        .conv2d(params.get(LOWFUSE_CAT_WEIGHT)?, 1, 0)?
        .add(params.get(LOWFUSE_CAT_BIAS)?)?;
    let f_ll = mixed.resize_nearest(target_hw.0, target_hw.1)?;
    let refined = f_ll
        .conv2d(params.get(LOWFUSE_RES_WEIGHT)?, 1, 1)?
        .add(params.get(LOWFUSE_RES_BIAS)?)?;
    refined.add(&f_ll)
}

// ---------------------------------------------------------------------------
// Multi-scale pyramid
// ---------------------------------------------------------------------------

/// Parameter names used by the learned pyramid upsamplers.
pub const PYRAMID_UP2_WEIGHT: &str = "pyr.up2.w";
pub const PYRAMID_UP4_WEIGHT: &str = "pyr.up4.w";

/// How the pyramid's 2× and 4× upsampling branches are computed.
/// Downsampling is always max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidMode {
    /// Learned transposed convolutions (parameters required).
    Learned,
    /// Parameter-free nearest-neighbour duplication.
    Nearest,
}

/// Register the transposed-conv kernels for [`PyramidMode::Learned`].
pub fn register_pyramid(params: &mut ParamStore, channels: usize) -> Result<()> {
    let limit = 1.0 / (4.0 * channels as f64).sqrt();
    params.add_uniform(PYRAMID_UP2_WEIGHT, &[4, 4, channels, channels], limit)?;
    params.add_uniform(PYRAMID_UP4_WEIGHT, &[8, 8, channels, channels], limit)
}

/// Expand a feature map into five scales: [4×, 2×, 1×, 1/2×, 1/4×].
///
/// Requires spatial dims divisible by 4 so the pooled branches are exact.
pub fn multiscale_pyramid(
    f_l: &Tensor,
    mode: PyramidMode,
    params: &ParamStore,
) -> Result<[Tensor; 5]> {
    let (h, w, _) = f_l.hwc()?;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Dimension(format!(
            "pyramid needs spatial dims divisible by 4, got {h}×{w}"
        )));
    }
    let (up2, up4) = match mode {
        PyramidMode::Learned => (
            f_l.conv_transpose2d(params.get(PYRAMID_UP2_WEIGHT)?, 2)?,
            f_l.conv_transpose2d(params.get(PYRAMID_UP4_WEIGHT)?, 4)?,
        ),
        PyramidMode::Nearest => (
            f_l.resize_nearest(2 * h, 2 * w)?,
            f_l.resize_nearest(4 * h, 4 * w)?,
        ),
    };
    Ok([up4, up2, f_l.clone(), f_l.max_pool(2)?, f_l.max_pool(4)?])
}

// ---------------------------------------------------------------------------
// High-frequency fusion
// ---------------------------------------------------------------------------

/// Parameter names used by [`highfreq_fuse`].
pub const HIGHFUSE_MIX_WEIGHT: &str = "highfuse.mix.w";
pub const HIGHFUSE_MIX_BIAS: &str = "highfuse.mix.b";
pub const HIGHFUSE_OUT_WEIGHT: &str = "highfuse.out.w";
pub const HIGHFUSE_OUT_BIAS: &str = "highfuse.out.b";

/// Register high-frequency fusion parameters. `hidden` is the width after
/// the channel-expanding 1×1 conv; `out_channels` must match the encoder
/// features the result is superimposed on.
pub fn register_highfreq_fuse(
    params: &mut ParamStore,
    hidden: usize,
    out_channels: usize,
) -> Result<()> {
    params.add_uniform(HIGHFUSE_MIX_WEIGHT, &[1, 1, 1, hidden], 1.0)?;
    params.add_zeros(HIGHFUSE_MIX_BIAS, &[1, 1, hidden])?;
    params.add_uniform(
        HIGHFUSE_OUT_WEIGHT,
        &[3, 3, hidden, out_channels],
        1.0 / (9.0 * hidden as f64).sqrt(),
    )?;
    params.add_zeros(HIGHFUSE_OUT_BIAS, &[1, 1, out_channels])
}

/// Directional magnitude maps of one decomposition: the L1 map
/// |LH| + |HH| + |HL| and the L2 map sqrt(LH² + HH² + HL²).
///
/// Both are nonnegative, and L2 ≤ L1 ≤ √3·L2 elementwise.
pub fn directional_magnitudes(bands: &WaveletBands) -> Result<(Tensor, Tensor)> {
    let l1 = bands
        .lh
        .abs()
        .add(&bands.hh.abs())?
        .add(&bands.hl.abs())?;
    let sq = |t: &Tensor| t.mul(t);
    let l2 = sq(&bands.lh)?
        .add(&sq(&bands.hh)?)?
        .add(&sq(&bands.hl)?)?
        .sqrt()?;
    Ok((l1, l2))
}

/// Energy-weighted combination of the per-scale high-frequency maps.
///
/// Per scale: H_s = (|LH|+|HH|+|HL|) + sqrt(LH²+HH²+HL²), reduced to one
/// channel (mean) and nearest-resized to the largest band grid. The
/// combination is Σ_s H_s · (H_s / (Σ_s H_s + eps)): scales contribute in
/// proportion to their share of the total energy, and `eps` keeps the
/// all-zero case at exactly 0 instead of 0/0.
pub fn highfreq_energy_map(bands: &[WaveletBands], eps: f64) -> Result<Tensor> {
    expect_four_scales(bands)?;
    let mut maps = Vec::with_capacity(4);
    for b in bands {
        let (l1, l2) = directional_magnitudes(b)?;
        maps.push(channel_mean(&l1.add(&l2)?)?);
    }
    let (gh, gw) = largest_grid(&maps)?;
    let maps: Vec<Tensor> = maps
        .iter()
        .map(|m| m.resize_nearest(gh, gw))
        .collect::<Result<_>>()?;
    let mut total = maps[0].clone();
    for m in &maps[1..] {
        total = total.add(m)?;
    }
    let denom = total.add_scalar(eps);
    let mut out: Option<Tensor> = None;
    for m in &maps {
        let term = m.mul(&m.div(&denom)?)?;
        out = Some(match out {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok(out.expect("four scales present"))
}

/// Default epsilon guarding the energy-weighted sum.
pub const HIGHFREQ_EPS: f64 = 1e-8;

/// Fuse the high-frequency bands of all stages into a feature map aligned
/// with the encoder output: 2× upsample the combined energy map, expand
/// channels with a 1×1 conv, refine with a 3×3 conv, and nearest-resize to
/// `target_hw`.
pub fn highfreq_fuse(
    bands: &[WaveletBands],
    params: &ParamStore,
    target_hw: (usize, usize),
    eps: f64,
) -> Result<Tensor> {
    let h_all = highfreq_energy_map(bands, eps)?;
    let (h, w, _) = h_all.hwc()?;
    let up = h_all.resize_nearest(2 * h, 2 * w)?;
    let mixed = up
        .conv2d(params.get(HIGHFUSE_MIX_WEIGHT)?, 1, 0)?
        .add(params.get(HIGHFUSE_MIX_BIAS)?)?;
    let refined = mixed
        .conv2d(params.get(HIGHFUSE_OUT_WEIGHT)?, 1, 1)?
        .add(params.get(HIGHFUSE_OUT_BIAS)?)?;
    refined.resize_nearest(target_hw.0, target_hw.1)
}

/// Add the high-frequency feature map onto the encoder features.
pub fn superimpose(f_o: &Tensor, f_h: &Tensor) -> Result<Tensor> {
    if f_o.shape() != f_h.shape() {
        return Err(Error::Dimension(format!(
            "superimpose shapes must match: {:?} vs {:?}",
            f_o.shape(),
            f_h.shape()
        )));
    }
    f_o.add(f_h)
}

// ---------------------------------------------------------------------------
// Salience head and prompts
// ---------------------------------------------------------------------------

/// Parameter names used by [`proposal_head`].
pub const PROPOSAL_WEIGHT: &str = "proposal.w";
pub const PROPOSAL_BIAS: &str = "proposal.b";

/// Register the shared salience-head convolution for `channels`-wide input.
pub fn register_proposal_head(params: &mut ParamStore, channels: usize) -> Result<()> {
    params.add_uniform(
        PROPOSAL_WEIGHT,
        &[3, 3, channels, 1],
        1.0 / (9.0 * channels as f64).sqrt(),
    )?;
    params.add_zeros(PROPOSAL_BIAS, &[1, 1, 1])
}

/// A point proposal: `x` is the column, `y` the row, in full-resolution
/// pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prompt {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// Turn the five-scale pyramid into a full-resolution salience map plus
/// point prompts.
///
/// Each scale goes through the shared 3×3 conv + sigmoid, is nearest-resized
/// to `full_hw`, and the five maps are averaged. Prompts are the strict
/// local maxima of the average above 0.5, thinned by non-maximum suppression
/// with an 8-pixel radius.
pub fn proposal_head(
    pyramid: &[Tensor; 5],
    params: &ParamStore,
    full_hw: (usize, usize),
) -> Result<(Tensor, Vec<Prompt>)> {
    let w = params.get(PROPOSAL_WEIGHT)?;
    let b = params.get(PROPOSAL_BIAS)?;
    let mut acc: Option<Tensor> = None;
    for scale in pyramid {
        let s = scale
            .conv2d(w, 1, 1)?
            .add(b)?
            .sigmoid()
            .resize_nearest(full_hw.0, full_hw.1)?;
        acc = Some(match acc {
            Some(a) => a.add(&s)?,
            None => s,
        });
    }
    let salience = acc.expect("pyramid has five scales").mul_scalar(1.0 / 5.0);
    let prompts = peak_prompts(&salience, 0.5, 8.0)?;
    Ok((salience, prompts))
}

/// Strict local maxima of a single-channel map above `threshold`, thinned by
/// greedy non-maximum suppression: candidates are visited in (score
/// descending, y, x) order and dropped if within `nms_radius` (Euclidean) of
/// an already-kept prompt. The surviving list keeps that order.
pub fn peak_prompts(salience: &Tensor, threshold: f64, nms_radius: f64) -> Result<Vec<Prompt>> {
    let (h, w, c) = salience.hwc()?;
    if c != 1 {
        return Err(Error::Dimension(format!(
            "salience map must have one channel, got {c}"
        )));
    }
    let mut candidates: Vec<Prompt> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = salience.at(y, x, 0);
            if v <= threshold {
                continue;
            }
            let mut is_peak = true;
            'nbrs: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    if salience.at(ny as usize, nx as usize, 0) >= v {
                        is_peak = false;
                        break 'nbrs;
                    }
                }
            }
            if is_peak {
                candidates.push(Prompt { x, y, score: v });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("salience values are finite")
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    let r2 = nms_radius * nms_radius;
    let mut kept: Vec<Prompt> = Vec::new();
    for cand in candidates {
        let suppressed = kept.iter().any(|k| {
            let dy = cand.y as f64 - k.y as f64;
            let dx = cand.x as f64 - k.x as f64;
            dy * dy + dx * dx <= r2
        });
        if !suppressed {
            kept.push(cand);
        }
    }
    Ok(kept)
}
