//! COCO-style annotation loading, mask decoding, and prediction writing.
//!
//! The on-disk formats are deliberately narrow: JSON documents with `images`
//! and `annotations` arrays, polygon segmentations as flat coordinate lists,
//! and *uncompressed* run-length encodings (column-major, background run
//! first). Prediction files are COCO-results-style JSON arrays that round-trip
//! bit-exactly through the loader.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

/// One image record: identity plus pixel dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: i64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

/// Segmentation payload of one annotation.
#[derive(Debug, Clone, PartialEq)]
pub enum Segmentation {
    /// One or more rings, each a flat [x1, y1, x2, y2, …] list; the decoded
    /// mask is the union of the even-odd fills.
    Polygons(Vec<Vec<f64>>),
    /// Uncompressed run-length encoding: `size` is (height, width), counts
    /// alternate background/foreground runs in column-major pixel order.
    Rle {
        size: (usize, usize),
        counts: Vec<usize>,
    },
}

/// One instance annotation.
#[derive(Debug, Clone)]
pub struct Annotation {
    pub image_id: i64,
    pub segmentation: Segmentation,
    pub score: Option<f64>,
    pub iscrowd: bool,
}

/// A loaded annotation document: every annotation references an image that
/// exists in `images`.
#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
}

impl AnnotationSet {
    /// Look up an image record by id.
    pub fn image(&self, id: i64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }
}

/// A scored instance mask attached to an image.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub image_id: i64,
    pub mask: Mask,
    pub score: f64,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawDoc {
    #[serde(default)]
    images: Vec<ImageInfo>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: i64,
    segmentation: RawSegmentation,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle {
        size: [usize; 2],
        counts: Vec<usize>,
    },
}

impl From<RawSegmentation> for Segmentation {
    fn from(raw: RawSegmentation) -> Segmentation {
        match raw {
            RawSegmentation::Polygons(p) => Segmentation::Polygons(p),
            RawSegmentation::Rle { size, counts } => Segmentation::Rle {
                size: (size[0], size[1]),
                counts,
            },
        }
    }
}

/// Byte offset of a 1-based (line, column) position in `src`.
fn offset_of(src: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let before: usize = src
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    before + column.saturating_sub(1)
}

fn json_error(src: &str, err: &serde_json::Error) -> Error {
    let (line, column) = (err.line(), err.column());
    Error::Parse {
        offset: offset_of(src, line, column),
        line,
        column,
        message: err.to_string(),
    }
}

fn read_with_path(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Parse an annotation document from a JSON string.
///
/// Unknown top-level keys are ignored. Annotations referencing image ids not
/// present in `images` are rejected with a validation error listing the ids.
pub fn parse_coco(src: &str) -> Result<AnnotationSet> {
    let raw: RawDoc = serde_json::from_str(src).map_err(|e| json_error(src, &e))?;
    let known: std::collections::BTreeSet<i64> = raw.images.iter().map(|im| im.id).collect();
    let mut missing: Vec<i64> = raw
        .annotations
        .iter()
        .map(|a| a.image_id)
        .filter(|id| !known.contains(id))
        .collect();
    missing.sort_unstable();
    missing.dedup();
    if !missing.is_empty() {
        let ids: Vec<String> = missing.iter().map(i64::to_string).collect();
        return Err(Error::Validation(format!(
            "annotations reference unknown image ids: {}",
            ids.join(", ")
        )));
    }
    Ok(AnnotationSet {
        images: raw.images,
        annotations: raw
            .annotations
            .into_iter()
            .map(|a| Annotation {
                image_id: a.image_id,
                segmentation: a.segmentation.into(),
                score: a.score,
                iscrowd: a.iscrowd != 0,
            })
            .collect(),
    })
}

/// Load an annotation document from disk (see [`parse_coco`]).
pub fn load_coco(path: &Path) -> Result<AnnotationSet> {
    parse_coco(&read_with_path(path)?)
}

// ---------------------------------------------------------------------------
// Mask decoding
// ---------------------------------------------------------------------------

/// Even-odd point-in-polygon test (parity of edge crossings).
fn inside_polygon(ring: &[f64], px: f64, py: f64) -> bool {
    let n = ring.len() / 2;
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (ring[2 * i], ring[2 * i + 1]);
        let (xj, yj) = (ring[2 * j], ring[2 * j + 1]);
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Rasterize a segmentation onto a `height`×`width` grid.
///
/// Polygons are filled with the even-odd rule, sampling at pixel centers
/// (x + 0.5, y + 0.5); multiple rings union. RLE decodes column-major with
/// the background run first.
pub fn decode_mask(seg: &Segmentation, height: usize, width: usize) -> Result<Mask> {
    match seg {
        Segmentation::Polygons(rings) => {
            let mut mask = Mask::zeros(height, width);
            for ring in rings {
                if ring.len() % 2 != 0 {
                    return Err(Error::Format(format!(
                        "polygon has an odd number of coordinates ({})",
                        ring.len()
                    )));
                }
                if ring.len() < 6 {
                    continue; // fewer than 3 vertices encloses nothing
                }
                for y in 0..height {
                    for x in 0..width {
                        if !mask.get(y, x)
                            && inside_polygon(ring, x as f64 + 0.5, y as f64 + 0.5)
                        {
                            mask.set(y, x, true);
                        }
                    }
                }
            }
            Ok(mask)
        }
        Segmentation::Rle { size, counts } => {
            if *size != (height, width) {
                return Err(Error::Format(format!(
                    "RLE size {}×{} does not match the image's {height}×{width}",
                    size.0, size.1
                )));
            }
            let total: usize = counts.iter().sum();
            if total != height * width {
                return Err(Error::Format(format!(
                    "RLE counts sum to {total}, expected {}",
                    height * width
                )));
            }
            let mut mask = Mask::zeros(height, width);
            let mut idx = 0usize;
            let mut value = false;
            for &run in counts {
                for _ in 0..run {
                    if value {
                        mask.set(idx % height, idx / height, true);
                    }
                    idx += 1;
                }
                value = !value;
            }
            Ok(mask)
        }
    }
}

/// Uncompressed column-major RLE of a mask, background run first (the first
/// count is 0 when the top-left pixel is set).
pub fn encode_rle(mask: &Mask) -> Vec<usize> {
    let (h, w) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0usize;
    for x in 0..w {
        for y in 0..h {
            let v = mask.get(y, x);
            if v == current {
                run += 1;
            } else {
                counts.push(run);
                current = v;
                run = 1;
            }
        }
    }
    counts.push(run);
    counts
}

// ---------------------------------------------------------------------------
// Prediction files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RleRecord {
    size: [usize; 2],
    counts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    image_id: i64,
    segmentation: RleRecord,
    score: f64,
}

/// Write predictions as a COCO-results-style JSON array. Scores must lie in
/// [0, 1]; violations are rejected before anything is written.
pub fn write_predictions(preds: &[Prediction], path: &Path) -> Result<()> {
    for (i, p) in preds.iter().enumerate() {
        if !(0.0..=1.0).contains(&p.score) {
            return Err(Error::Contract(format!(
                "prediction {i} has score {} outside [0, 1]",
                p.score
            )));
        }
    }
    let records: Vec<PredictionRecord> = preds
        .iter()
        .map(|p| {
            let (h, w) = p.mask.dims();
            PredictionRecord {
                image_id: p.image_id,
                segmentation: RleRecord {
                    size: [h, w],
                    counts: encode_rle(&p.mask),
                },
                score: p.score,
            }
        })
        .collect();
    let json = serde_json::to_string_pretty(&records).expect("prediction records serialize");
    std::fs::write(path, json)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Load a prediction file written by [`write_predictions`].
pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let src = read_with_path(path)?;
    let records: Vec<PredictionRecord> =
        serde_json::from_str(&src).map_err(|e| json_error(&src, &e))?;
    records
        .into_iter()
        .map(|r| {
            let (h, w) = (r.segmentation.size[0], r.segmentation.size[1]);
            let seg = Segmentation::Rle {
                size: (h, w),
                counts: r.segmentation.counts,
            };
            Ok(Prediction {
                image_id: r.image_id,
                mask: decode_mask(&seg, h, w)?,
                score: r.score,
            })
        })
        .collect()
}
