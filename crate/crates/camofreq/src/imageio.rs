//! PNG input/output.
//!
//! Pixels travel as float64 in [0, 1]. Quantization back to 8-bit uses
//! round-half-even, so a load-then-save round trip reproduces every 8-bit
//! level exactly — operations parameterized to be identities (e.g. a K=0
//! spectrum filter) stay pixel-identical through file round trips.

use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

fn image_error(path: &Path, what: &str, err: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {what}: {err}", path.display()))
}

/// Quantize an already-scaled level (0..=255 nominal) with round-half-even.
fn quantize_level(x: f64) -> u8 {
    x.round_ties_even().clamp(0.0, 255.0) as u8
}

/// Load an image as an H×W×3 tensor with values in [0, 1]. Grayscale and
/// alpha-carrying PNGs are converted to RGB.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| image_error(path, "cannot read image", e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x, y);
            for k in 0..3 {
                data.push(p.0[k] as f64 / 255.0);
            }
        }
    }
    Tensor::new(&[h as usize, w as usize, 3], data)
}

/// Save a tensor as an 8-bit PNG: H×W×3 as RGB, H×W×1 as grayscale.
/// Values are clamped to [0, 1] before quantization.
pub fn save_image(t: &Tensor, path: &Path) -> Result<()> {
    let (h, w, c) = t.hwc()?;
    match c {
        3 => {
            let mut img = RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let px = image::Rgb([
                        quantize_level(t.at(y, x, 0) * 255.0),
                        quantize_level(t.at(y, x, 1) * 255.0),
                        quantize_level(t.at(y, x, 2) * 255.0),
                    ]);
                    img.put_pixel(x as u32, y as u32, px);
                }
            }
            img.save_with_format(path, ImageFormat::Png)
                .map_err(|e| image_error(path, "cannot write image", e))
        }
        1 => {
            let mut img = GrayImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let px = image::Luma([quantize_level(t.at(y, x, 0) * 255.0)]);
                    img.put_pixel(x as u32, y as u32, px);
                }
            }
            img.save_with_format(path, ImageFormat::Png)
                .map_err(|e| image_error(path, "cannot write image", e))
        }
        other => Err(Error::Dimension(format!(
            "PNG output supports 1 or 3 channels, got {other}"
        ))),
    }
}

/// Load a single-channel PNG as a binary mask: levels above 127 are set.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|e| image_error(path, "cannot read mask", e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            data.push(img.get_pixel(x, y).0[0] > 127);
        }
    }
    Mask::new(h as usize, w as usize, data)
}

/// Save a binary mask as a single-channel PNG with levels {0, 255}.
pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let (h, w) = mask.dims();
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let level = if mask.get(y, x) { 255 } else { 0 };
            img.put_pixel(x as u32, y as u32, image::Luma([level]));
        }
    }
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_error(path, "cannot write mask", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::seeded;
    use rand::Rng;

    #[test]
    fn halfway_levels_round_to_even() {
        assert_eq!(quantize_level(2.5), 2);
        assert_eq!(quantize_level(3.5), 4);
        assert_eq!(quantize_level(254.5), 254);
        assert_eq!(quantize_level(0.49), 0);
        assert_eq!(quantize_level(-3.0), 0);
        assert_eq!(quantize_level(300.0), 255);
    }

    #[test]
    fn every_eight_bit_level_survives_a_round_trip() {
        for level in 0u16..=255 {
            let v = level as f64 / 255.0;
            assert_eq!(quantize_level(v * 255.0), level as u8, "level {level}");
        }
    }

    #[test]
    fn rgb_file_round_trip_is_pixel_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut rng = seeded(90);
        let mut vals = Vec::new();
        for _ in 0..13 * 9 * 3 {
            vals.push(rng.random_range(0..=255u32) as f64 / 255.0);
        }
        let t = Tensor::new(&[13, 9, 3], vals).unwrap();
        save_image(&t, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn grayscale_saves_load_as_replicated_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let t = Tensor::from_fn(4, 4, 1, |y, x, _| ((y * 4 + x) * 16) as f64 / 255.0);
        save_image(&t, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), &[4, 4, 3]);
        for y in 0..4 {
            for x in 0..4 {
                let v = back.at(y, x, 0);
                assert_eq!(v, back.at(y, x, 1));
                assert_eq!(v, back.at(y, x, 2));
                assert_eq!(v, t.at(y, x, 0));
            }
        }
    }

    #[test]
    fn unsupported_channel_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::zeros(&[2, 2, 4]).unwrap();
        assert!(matches!(
            save_image(&t, &dir.path().join("bad.png")),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mask = Mask::from_fn(6, 5, |y, x| (y + 2 * x) % 3 == 0);
        save_mask(&mask, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn missing_file_reports_the_path() {
        let err = load_image(Path::new("/nonexistent/img.png")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nonexistent"), "{msg}");
    }

    #[test]
    fn out_of_range_values_clamp_instead_of_wrapping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clamp.png");
        let t = Tensor::new(&[1, 2, 1], vec![-0.5, 1.5]).unwrap();
        save_image(&t, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.at(0, 0, 0), 0.0);
        assert_eq!(back.at(0, 1, 0), 1.0);
    }
}
