//! Channel bias optimization.
//!
//! Camouflaged foregrounds depress some channels' responses relative to the
//! strongest channel. This module measures that per-channel deficit against
//! the strongest channel's mean activation, turns it into a per-channel
//! gating map through a small bottleneck MLP (expressed as 1×1 convolutions),
//! and blends the gated features back with the originals under a mixing
//! weight λ.
//!
//! Instances are identified by a parameter-name prefix so several blocks
//! (one per encoder stage) can live in one [`ParamStore`].

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

/// Per-channel deficit of a feature map.
pub struct ChannelBias {
    /// 1×1×C deficit tensor d = μ_r − μ, differentiable back to the input.
    pub d: Tensor,
    /// Per-channel spatial means.
    pub mu: Vec<f64>,
    /// Reference level: the largest channel mean.
    pub mu_r: f64,
}

/// Hidden width of the bottleneck: C/4, floored at 4.
pub fn hidden_width(channels: usize) -> usize {
    (channels / 4).max(4)
}

fn w1(prefix: &str) -> String {
    format!("{prefix}.w1")
}
fn b1(prefix: &str) -> String {
    format!("{prefix}.b1")
}
fn w2(prefix: &str) -> String {
    format!("{prefix}.w2")
}
fn b2(prefix: &str) -> String {
    format!("{prefix}.b2")
}

/// Register one block's parameters under `prefix` for `channels`-wide input.
pub fn register_channel_bias(
    params: &mut ParamStore,
    prefix: &str,
    channels: usize,
) -> Result<()> {
    let hidden = hidden_width(channels);
    params.add_uniform(
        &w1(prefix),
        &[1, 1, channels, hidden],
        1.0 / (channels as f64).sqrt(),
    )?;
    params.add_zeros(&b1(prefix), &[1, 1, hidden])?;
    params.add_uniform(
        &w2(prefix),
        &[1, 1, hidden, channels],
        1.0 / (hidden as f64).sqrt(),
    )?;
    params.add_zeros(&b2(prefix), &[1, 1, channels])
}

/// Measure each channel's mean deficit below the strongest channel.
///
/// d = μ_r − μ where μ is the per-channel spatial mean and μ_r = max_c μ_c.
/// All channels at the same level (e.g. a gray image at the first stage)
/// give d = 0.
pub fn channel_reference(f: &Tensor) -> Result<ChannelBias> {
    let mu_t = f.spatial_mean()?; // 1×1×C
    let mu_r_t = mu_t.channel_max()?; // 1×1×1
    let d = mu_r_t.sub(&mu_t)?; // broadcast to 1×1×C
    Ok(ChannelBias {
        mu: mu_t.data().to_vec(),
        mu_r: mu_r_t.item()?,
        d,
    })
}

/// Map the deficit vector to per-channel gains in (0, 1):
/// D′ = σ(W₂·gelu(W₁·d + b₁) + b₂), shapes 1×1×C throughout.
pub fn bias_map(d: &Tensor, params: &ParamStore, prefix: &str) -> Result<Tensor> {
    let hidden = d
        .conv2d(params.get(&w1(prefix))?, 1, 0)?
        .add(params.get(&b1(prefix))?)?
        .gelu();
    Ok(hidden
        .conv2d(params.get(&w2(prefix))?, 1, 0)?
        .add(params.get(&b2(prefix))?)?
        .sigmoid())
}

/// Blend gated features with the originals: F′ = λ(F ⊙ D′) + (1−λ)F.
///
/// `d_prime` broadcasts over the spatial grid (1×1×C against H×W×C).
/// λ must lie in [0, 1]; λ = 0 returns the input unchanged (bit-exact).
pub fn cbom_fuse(f: &Tensor, d_prime: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Contract(format!(
            "mixing weight must be in [0, 1], got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(f.clone());
    }
    let gated = f.mul(d_prime)?.mul_scalar(lambda);
    gated.add(&f.mul_scalar(1.0 - lambda))
}

/// Full block: measure the deficit, derive gains, blend.
pub fn apply(f: &Tensor, params: &ParamStore, prefix: &str, lambda: f64) -> Result<Tensor> {
    let bias = channel_reference(f)?;
    let d_prime = bias_map(&bias.d, params, prefix)?;
    cbom_fuse(f, &d_prime, lambda)
}
