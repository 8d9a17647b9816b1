//! Deterministic synthetic camouflage scenes.
//!
//! Each sample is a smooth multi-sinusoid background texture with a handful
//! of star-convex blobs rendered in the *same* texture family, separated
//! from the background only by a contrast knob: at contrast 0 the objects
//! are statistically invisible, at contrast 1 their interior differs from
//! the background by a comfortable margin. Blob boundaries can be softened
//! with a Gaussian alpha blur, and a small amount of white noise is added
//! on top. Everything derives from ChaCha streams keyed by (seed, sample
//! index, purpose), so any sample can be regenerated in isolation.

use libm::erfc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

/// One generated scene.
#[derive(Debug, Clone)]
pub struct SynthSample {
    /// H×W×3 image. Values are *not* clamped; the nominal range is ≈[0, 1.1]
    /// and image encoding clamps on save.
    pub image: Tensor,
    /// Disjoint binary instance masks (pre-blur blob shapes), each at least
    /// 16 pixels.
    pub instance_masks: Vec<Mask>,
    pub contrast: f64,
    pub boundary_blur_sigma: f64,
}

const BG_BASE: f64 = 0.36;
const WAVE_AMP: f64 = 0.08;
const N_WAVES: usize = 4;
/// Object interior offsets at full contrast: the DC shift dominates the
/// worst-case sinusoid disagreement, keeping the interior at least ≈0.59
/// away from the background underneath it.
const OBJECT_DC_SHIFT: f64 = 0.70;
const OBJECT_AMP_GAIN: f64 = 0.10;
const OBJECT_PHASE_SHIFT: f64 = 0.10 * std::f64::consts::PI;
const NOISE_SIGMA: f64 = 0.01;
const MIN_BLOB_PIXELS: usize = 16;

const PURPOSE_TEXTURE: u64 = 1;
const PURPOSE_BLOBS: u64 = 2;
const PURPOSE_NOISE: u64 = 3;

fn purpose_rng(seed: u64, index: usize, purpose: u64) -> ChaCha8Rng {
    let mixed = seed
        ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ purpose.wrapping_mul(0xD1B5_4A32_D192_ED03);
    ChaCha8Rng::seed_from_u64(mixed)
}

struct Waves {
    fx: [f64; N_WAVES],
    fy: [f64; N_WAVES],
    phase: [f64; N_WAVES],
    channel_phase: [f64; 3],
}

fn draw_waves(rng: &mut ChaCha8Rng) -> Waves {
    let mut fx = [0.0; N_WAVES];
    let mut fy = [0.0; N_WAVES];
    let mut phase = [0.0; N_WAVES];
    for j in 0..N_WAVES {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let cycles = rng.random_range(1.0..6.0);
        fx[j] = cycles * angle.cos();
        fy[j] = cycles * angle.sin();
        phase[j] = rng.random_range(0.0..std::f64::consts::TAU);
    }
    let mut channel_phase = [0.0; 3];
    for c in &mut channel_phase {
        *c = rng.random_range(0.0..std::f64::consts::TAU);
    }
    Waves {
        fx,
        fy,
        phase,
        channel_phase,
    }
}

/// Texture modifiers that select between the background appearance and the
/// contrast-shifted object appearance.
#[derive(Clone, Copy)]
struct TextureVariant {
    dc: f64,
    amp: f64,
    shift: f64,
}

const BG_VARIANT: TextureVariant = TextureVariant {
    dc: 0.0,
    amp: 1.0,
    shift: 0.0,
};

/// Texture value at (y, x, channel) under the given variant.
fn texture_at(
    waves: &Waves,
    hw: (usize, usize),
    y: usize,
    x: usize,
    ch: usize,
    variant: TextureVariant,
) -> f64 {
    let (h, w) = hw;
    let mut v = BG_BASE + variant.dc;
    for j in 0..N_WAVES {
        let arg = std::f64::consts::TAU
            * (waves.fx[j] * x as f64 / w as f64 + waves.fy[j] * y as f64 / h as f64)
            + waves.phase[j]
            + waves.channel_phase[ch]
            + variant.shift;
        v += WAVE_AMP * variant.amp * arg.sin();
    }
    v
}

struct Blob {
    cy: f64,
    cx: f64,
    r0: f64,
    a: [f64; 3],
    psi: [f64; 3],
}

fn blob_radius(b: &Blob, theta: f64) -> f64 {
    let mut r = 1.0;
    for k in 0..3 {
        r += b.a[k] * ((k as f64 + 1.0) * theta + b.psi[k]).sin();
    }
    b.r0 * r
}

fn rasterize_blob(b: &Blob, hw: (usize, usize)) -> Mask {
    let (h, w) = hw;
    let reach = b.r0 * 1.3 + 1.0;
    let y0 = ((b.cy - reach).floor().max(0.0)) as usize;
    let y1 = ((b.cy + reach).ceil().min(h as f64 - 1.0)) as usize;
    let x0 = ((b.cx - reach).floor().max(0.0)) as usize;
    let x1 = ((b.cx + reach).ceil().min(w as f64 - 1.0)) as usize;
    let mut m = Mask::zeros(h, w);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dy = y as f64 - b.cy;
            let dx = x as f64 - b.cx;
            let dist = (dy * dy + dx * dx).sqrt();
            let theta = dy.atan2(dx);
            if dist <= blob_radius(b, theta) {
                m.set(y, x, true);
            }
        }
    }
    m
}

fn draw_blobs(rng: &mut ChaCha8Rng, hw: (usize, usize), range: (usize, usize)) -> Vec<Mask> {
    let (h, w) = hw;
    let s = h.min(w) as f64;
    let r_lo = (0.08 * s).max(2.6);
    let r_hi = (0.17 * s).max(r_lo + 1.0);
    let target = rng.random_range(range.0..=range.1);
    let mut placed: Vec<(Blob, Mask)> = Vec::new();
    let mut attempts = 0;
    while placed.len() < target && attempts < 200 {
        attempts += 1;
        let r0 = rng.random_range(r_lo..r_hi);
        let margin = r0 * 1.3 + 1.0;
        if 2.0 * margin >= s {
            continue;
        }
        let cy = rng.random_range(margin..h as f64 - margin);
        let cx = rng.random_range(margin..w as f64 - margin);
        let mut a = [0.0; 3];
        let mut psi = [0.0; 3];
        for k in 0..3 {
            a[k] = rng.random_range(0.0..0.1);
            psi[k] = rng.random_range(0.0..std::f64::consts::TAU);
        }
        let blob = Blob { cy, cx, r0, a, psi };
        let clash = placed.iter().any(|(other, _)| {
            let d = ((blob.cy - other.cy).powi(2) + (blob.cx - other.cx).powi(2)).sqrt();
            d <= 1.3 * (blob.r0 + other.r0) + 2.0
        });
        if clash {
            continue;
        }
        let mask = rasterize_blob(&blob, hw);
        if mask.count() < MIN_BLOB_PIXELS {
            continue;
        }
        placed.push((blob, mask));
    }
    if placed.is_empty() {
        // Deterministic fallback: a plain disc in the middle always fits.
        let blob = Blob {
            cy: h as f64 / 2.0,
            cx: w as f64 / 2.0,
            r0: r_hi,
            a: [0.0; 3],
            psi: [0.0; 3],
        };
        let mask = rasterize_blob(&blob, hw);
        placed.push((blob, mask));
    }
    placed.into_iter().map(|(_, m)| m).collect()
}

/// Separable Gaussian blur over an H×W plane with replicated edges; sigma 0
/// returns the input unchanged.
fn gaussian_blur_plane(plane: &[f64], hw: (usize, usize), sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return plane.to_vec();
    }
    let (h, w) = hw;
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-0.5 * (i as f64 / sigma).powi(2)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let xi = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += k * plane[y * w + xi];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let yi = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += k * rows[yi * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Standard normal draws via the Box–Muller transform.
fn draw_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// The background texture of sample `index` under `seed`, without objects
/// or noise. `synth_camo` composes exactly this plane underneath its blobs,
/// so differencing an image against it isolates objects plus noise.
pub fn render_background(seed: u64, index: usize, hw: (usize, usize)) -> Result<Tensor> {
    check_hw(hw)?;
    let mut rng = purpose_rng(seed, index, PURPOSE_TEXTURE);
    let waves = draw_waves(&mut rng);
    let (h, w) = hw;
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                data.push(texture_at(&waves, hw, y, x, ch, BG_VARIANT));
            }
        }
    }
    Tensor::new(&[h, w, 3], data)
}

fn check_hw(hw: (usize, usize)) -> Result<()> {
    if hw.0.min(hw.1) < 32 {
        return Err(Error::Contract(format!(
            "scene must be at least 32 pixels on a side, got {}×{}",
            hw.0, hw.1
        )));
    }
    Ok(())
}

/// Generate `n_samples` scenes at resolution `hw`.
///
/// * `contrast` in [0, 1] scales how far object interiors depart from the
///   background texture (0 = statistically identical).
/// * `blur_sigma` ≥ 0 softens the object/background boundary.
/// * `n_instances` gives the inclusive (min, max) object count per scene,
///   within 1..=8.
pub fn synth_camo(
    seed: u64,
    n_samples: usize,
    hw: (usize, usize),
    contrast: f64,
    blur_sigma: f64,
    n_instances: (usize, usize),
) -> Result<Vec<SynthSample>> {
    (0..n_samples)
        .map(|index| generate_sample(seed, index, hw, contrast, blur_sigma, n_instances))
        .collect()
}

/// Generate the single sample `index` of the sequence `synth_camo(seed, …)`
/// would produce. Samples are independent, so callers may fan indices out
/// across threads and collect in order.
pub fn generate_sample(
    seed: u64,
    index: usize,
    hw: (usize, usize),
    contrast: f64,
    blur_sigma: f64,
    n_instances: (usize, usize),
) -> Result<SynthSample> {
    if !(0.0..=1.0).contains(&contrast) {
        return Err(Error::Contract(format!(
            "contrast must be in [0, 1], got {contrast}"
        )));
    }
    if !blur_sigma.is_finite() || blur_sigma < 0.0 {
        return Err(Error::Contract(format!(
            "blur sigma must be finite and nonnegative, got {blur_sigma}"
        )));
    }
    let (lo, hi) = n_instances;
    if lo < 1 || hi < lo || hi > 8 {
        return Err(Error::Contract(format!(
            "instance count range must satisfy 1 ≤ min ≤ max ≤ 8, got {lo}..={hi}"
        )));
    }
    check_hw(hw)?;

    let (h, w) = hw;
    let mut texture_rng = purpose_rng(seed, index, PURPOSE_TEXTURE);
    let waves = draw_waves(&mut texture_rng);
    let mut blob_rng = purpose_rng(seed, index, PURPOSE_BLOBS);
    let instance_masks = draw_blobs(&mut blob_rng, hw, (lo, hi));
    let mut noise_rng = purpose_rng(seed, index, PURPOSE_NOISE);

    // Hard union, then optional boundary softening.
    let mut alpha = vec![0.0f64; h * w];
    for m in &instance_masks {
        for (i, &set) in m.data().iter().enumerate() {
            if set {
                alpha[i] = 1.0;
            }
        }
    }
    let alpha = gaussian_blur_plane(&alpha, hw, blur_sigma);

    let object = TextureVariant {
        dc: OBJECT_DC_SHIFT * contrast,
        amp: 1.0 + OBJECT_AMP_GAIN * contrast,
        shift: OBJECT_PHASE_SHIFT * contrast,
    };
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let a = alpha[y * w + x];
            for ch in 0..3 {
                let bg = texture_at(&waves, hw, y, x, ch, BG_VARIANT);
                let obj = texture_at(&waves, hw, y, x, ch, object);
                let noise = NOISE_SIGMA * draw_normal(&mut noise_rng);
                data.push(bg * (1.0 - a) + obj * a + noise);
            }
        }
    }
    Ok(SynthSample {
        image: Tensor::new(&[h, w, 3], data)?,
        instance_masks,
        contrast,
        boundary_blur_sigma: blur_sigma,
    })
}

/// Two-sided Welch test that two samples share a mean, with the normal
/// approximation to the t statistic (sample sizes here are in the
/// thousands). Returns the p-value; degenerate zero-variance inputs give 1
/// when the means agree and 0 when they differ.
pub fn welch_mean_test(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 || b.len() < 2 {
        return 1.0;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    let se2 = va / a.len() as f64 + vb / b.len() as f64;
    if se2 == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    erfc(t.abs() / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalstat::iou;

    #[test]
    fn generation_is_deterministic_and_per_sample_reproducible() {
        let a = synth_camo(42, 3, (32, 32), 0.7, 1.0, (1, 3)).unwrap();
        let b = synth_camo(42, 3, (32, 32), 0.7, 1.0, (1, 3)).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            for (x, y) in sa.image.data().iter().zip(sb.image.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(sa.instance_masks.len(), sb.instance_masks.len());
        }
        // Sample 2 regenerated alone matches sample 2 of the batch.
        let lone = synth_camo(42, 3, (32, 32), 0.7, 1.0, (1, 3)).unwrap();
        for (x, y) in lone[2].image.data().iter().zip(a[2].image.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // A different seed changes the pixels.
        let c = synth_camo(43, 1, (32, 32), 0.7, 1.0, (1, 3)).unwrap();
        assert!(c[0]
            .image
            .data()
            .iter()
            .zip(a[0].image.data())
            .any(|(x, y)| x != y));
    }

    #[test]
    fn masks_are_disjoint_sized_and_counted() {
        for (seed, hw) in [(1u64, (32, 32)), (2, (64, 48)), (3, (128, 128))] {
            let samples = synth_camo(seed, 4, hw, 0.5, 0.0, (2, 5)).unwrap();
            for s in &samples {
                assert!(!s.instance_masks.is_empty() && s.instance_masks.len() <= 5);
                let mut seen = Mask::zeros(hw.0, hw.1);
                for m in &s.instance_masks {
                    assert!(m.count() >= 16, "blob of {} px", m.count());
                    for y in 0..hw.0 {
                        for x in 0..hw.1 {
                            if m.get(y, x) {
                                assert!(!seen.get(y, x), "masks overlap at ({y},{x})");
                                seen.set(y, x, true);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn full_contrast_objects_pop_out_of_the_difference_image() {
        let hw = (64, 64);
        let samples = synth_camo(5, 2, hw, 1.0, 0.0, (1, 3)).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let bg = render_background(5, i, hw).unwrap();
            // Max channel |difference| thresholded at the half-way point.
            let recovered = Mask::from_fn(hw.0, hw.1, |y, x| {
                (0..3).any(|c| (s.image.at(y, x, c) - bg.at(y, x, c)).abs() > 0.5)
            });
            let truth = crate::pipeline::union_masks(hw.0, hw.1, &s.instance_masks).unwrap();
            let overlap = iou(&recovered, &truth).unwrap();
            assert!(!overlap.both_empty);
            assert!(overlap.value > 0.95, "sample {i}: IoU {}", overlap.value);
        }
    }

    #[test]
    fn zero_contrast_objects_are_statistically_invisible() {
        let hw = (64, 64);
        let samples = synth_camo(9, 1, hw, 0.0, 0.0, (2, 4)).unwrap();
        let s = &samples[0];
        let bg = render_background(9, 0, hw).unwrap();
        let truth = crate::pipeline::union_masks(hw.0, hw.1, &s.instance_masks).unwrap();
        let mut fg_diff = Vec::new();
        let mut bg_diff = Vec::new();
        for y in 0..hw.0 {
            for x in 0..hw.1 {
                for c in 0..3 {
                    let d = s.image.at(y, x, c) - bg.at(y, x, c);
                    if truth.get(y, x) {
                        fg_diff.push(d);
                    } else {
                        bg_diff.push(d);
                    }
                }
            }
        }
        // With no contrast the residual is pure sensor noise on both sides.
        let p = welch_mean_test(&fg_diff, &bg_diff);
        assert!(p > 0.01, "p = {p}");
        assert!(
            fg_diff.iter().chain(&bg_diff).all(|d| d.abs() < 0.08),
            "residual should be small noise"
        );
    }

    #[test]
    fn boundary_blur_softens_the_alpha_edge() {
        let hw = (48, 48);
        let hard = synth_camo(11, 1, hw, 1.0, 0.0, (1, 1)).unwrap();
        let soft = synth_camo(11, 1, hw, 1.0, 2.0, (1, 1)).unwrap();
        // Same blobs (blur does not perturb the mask geometry)…
        assert_eq!(
            hard[0].instance_masks[0].count(),
            soft[0].instance_masks[0].count()
        );
        // …but the soft image has many pixels strictly between the two
        // texture levels near the boundary, where the hard one jumps.
        let bg = render_background(11, 0, hw).unwrap();
        let count_mid = |img: &Tensor| {
            let mut n = 0;
            for y in 0..hw.0 {
                for x in 0..hw.1 {
                    let d = (img.at(y, x, 0) - bg.at(y, x, 0)).abs();
                    if (0.1..0.5).contains(&d) {
                        n += 1;
                    }
                }
            }
            n
        };
        assert!(count_mid(&soft[0].image) > count_mid(&hard[0].image) + 10);
    }

    #[test]
    fn argument_contracts() {
        assert!(matches!(
            synth_camo(1, 1, (32, 32), 1.5, 0.0, (1, 2)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            synth_camo(1, 1, (32, 32), 0.5, -1.0, (1, 2)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            synth_camo(1, 1, (32, 32), 0.5, 0.0, (0, 2)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            synth_camo(1, 1, (32, 32), 0.5, 0.0, (3, 2)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            synth_camo(1, 1, (32, 32), 0.5, 0.0, (1, 9)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            synth_camo(1, 1, (16, 64), 0.5, 0.0, (1, 2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn welch_test_behaves_at_the_extremes() {
        let flat = vec![1.0; 100];
        assert_eq!(welch_mean_test(&flat, &flat), 1.0);
        let shifted = vec![2.0; 100];
        assert_eq!(welch_mean_test(&flat, &shifted), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..500).map(|_| draw_normal(&mut rng)).collect();
        let b: Vec<f64> = (0..500).map(|_| draw_normal(&mut rng) + 1.0).collect();
        assert!(welch_mean_test(&a, &b) < 1e-9);
        let c: Vec<f64> = (0..500).map(|_| draw_normal(&mut rng)).collect();
        assert!(welch_mean_test(&a, &c) > 0.01);
    }
}
