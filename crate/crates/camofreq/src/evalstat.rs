//! Class-agnostic mask average precision and dataset statistics.
//!
//! Matching follows the COCO convention: predictions sorted by score
//! descending, each greedily matched to the unmatched ground truth of
//! highest overlap above the threshold, average precision from the 101-point
//! interpolated precision-recall curve, averaged over IoU thresholds
//! 0.50:0.05:0.95. Camouflage-degree statistics (histogram contrast between
//! object and background, boundary-patch contrast, mask-size ratios) follow.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{decode_mask, AnnotationSet, ImageInfo};
use crate::mask::{IouOutcome, Mask};
use crate::tensor::Tensor;

/// IoU thresholds the mean AP averages over. Exact literals so fixtures with
/// rational overlaps (e.g. 3/5) compare predictably.
pub const IOU_THRESHOLDS: [f64; 10] = [
    0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];

/// Intersection-over-union of two same-sized masks (see [`Mask::iou`]).
pub fn iou(a: &Mask, b: &Mask) -> Result<IouOutcome> {
    a.iou(b)
}

/// A scored predicted instance.
#[derive(Debug, Clone)]
pub struct ScoredInstance {
    pub image_id: i64,
    pub mask: Mask,
    pub score: f64,
}

/// A ground-truth instance.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub image_id: i64,
    pub mask: Mask,
}

/// Precision-recall curve and AP at one IoU threshold.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdCurve {
    pub threshold: f64,
    pub ap: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Mask AP summary: `ap` is the arithmetic mean of the ten per-threshold
/// APs; `ap50`/`ap75` are the entries at thresholds 0.50 and 0.75.
#[derive(Debug, Clone, Serialize)]
pub struct APReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub per_threshold: Vec<ThresholdCurve>,
    pub n_gt: usize,
    pub n_pred: usize,
}

/// Area under the 101-point interpolated precision-recall curve.
fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    if precision.is_empty() {
        return 0.0;
    }
    // Running maximum of precision from the right.
    let mut max_prec = vec![0.0; precision.len()];
    let mut running = 0.0f64;
    for i in (0..precision.len()).rev() {
        running = running.max(precision[i]);
        max_prec[i] = running;
    }
    let mut total = 0.0;
    for level in 0..=100 {
        let r = level as f64 / 100.0;
        // First curve point reaching recall r (recall is nondecreasing).
        let j = recall.partition_point(|&rec| rec < r);
        if j < recall.len() {
            total += max_prec[j];
        }
    }
    total / 101.0
}

/// Class-agnostic mask AP over a set of images.
///
/// All masks belonging to one image must share its dimensions; masks of
/// different images may differ.
pub fn mask_ap(preds: &[ScoredInstance], gts: &[GroundTruth]) -> Result<APReport> {
    // Per-image dimension consistency.
    let mut dims: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for (id, d) in gts
        .iter()
        .map(|g| (g.image_id, g.mask.dims()))
        .chain(preds.iter().map(|p| (p.image_id, p.mask.dims())))
    {
        match dims.entry(id) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(d);
            }
            std::collections::btree_map::Entry::Occupied(e) => {
                if *e.get() != d {
                    return Err(Error::Dimension(format!(
                        "image {id} mixes mask dims {:?} and {d:?}",
                        e.get()
                    )));
                }
            }
        }
    }

    // Predictions in score-descending order (stable: ties keep input order).
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .partial_cmp(&preds[a].score)
            .expect("scores must not be NaN")
    });

    // Ground truths grouped by image.
    let mut gt_by_image: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_by_image.entry(g.image_id).or_default().push(i);
    }

    // Overlaps between each prediction and its image's ground truths,
    // computed in parallel but collected in deterministic prediction order.
    let overlaps: Vec<Vec<(usize, f64)>> = order
        .par_iter()
        .map(|&pi| {
            let p = &preds[pi];
            gt_by_image
                .get(&p.image_id)
                .map(|cands| {
                    cands
                        .iter()
                        .map(|&gi| {
                            let o = p.mask.iou(&gts[gi].mask).expect("dims checked above");
                            (gi, o.value)
                        })
                        .collect()
                })
                .unwrap_or_default()
        })
        .collect();

    let n_gt = gts.len();
    let per_threshold: Vec<ThresholdCurve> = IOU_THRESHOLDS
        .iter()
        .map(|&threshold| {
            let mut taken = vec![false; n_gt];
            let mut tp = 0usize;
            let mut precision = Vec::with_capacity(order.len());
            let mut recall = Vec::with_capacity(order.len());
            for (rank, cands) in overlaps.iter().enumerate() {
                let best = cands
                    .iter()
                    .filter(|&&(gi, v)| v >= threshold && !taken[gi])
                    .fold(None::<(usize, f64)>, |acc, &(gi, v)| match acc {
                        Some((_, bv)) if bv >= v => acc,
                        _ => Some((gi, v)),
                    });
                if let Some((gi, _)) = best {
                    taken[gi] = true;
                    tp += 1;
                }
                precision.push(tp as f64 / (rank + 1) as f64);
                recall.push(if n_gt == 0 {
                    0.0
                } else {
                    tp as f64 / n_gt as f64
                });
            }
            let ap = if n_gt == 0 {
                0.0
            } else {
                interpolated_ap(&precision, &recall)
            };
            ThresholdCurve {
                threshold,
                ap,
                precision,
                recall,
            }
        })
        .collect();

    let ap = per_threshold.iter().map(|c| c.ap).sum::<f64>() / IOU_THRESHOLDS.len() as f64;
    let at = |t: f64| {
        per_threshold
            .iter()
            .find(|c| c.threshold == t)
            .map(|c| c.ap)
            .unwrap_or(0.0)
    };
    Ok(APReport {
        ap,
        ap50: at(0.50),
        ap75: at(0.75),
        per_threshold,
        n_gt,
        n_pred: preds.len(),
    })
}

// ---------------------------------------------------------------------------
// Histograms and contrast
// ---------------------------------------------------------------------------

/// 256-bin per-channel value histogram with normalized probability masses.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    counts: Vec<Vec<u64>>,
    normalized: Vec<Vec<f64>>,
}

impl Histogram {
    pub const BINS: usize = 256;

    /// Histogram each channel's values (clamped to [0, 1]). Every channel
    /// must contribute at least one sample.
    pub fn from_channel_values(values: &[Vec<f64>]) -> Result<Histogram> {
        let mut counts = Vec::with_capacity(values.len());
        let mut normalized = Vec::with_capacity(values.len());
        for (ch, vals) in values.iter().enumerate() {
            if vals.is_empty() {
                return Err(Error::Contract(format!(
                    "channel {ch} has no samples to histogram"
                )));
            }
            let mut bins = vec![0u64; Self::BINS];
            for &v in vals {
                let b = ((v.clamp(0.0, 1.0)) * Self::BINS as f64).floor() as usize;
                bins[b.min(Self::BINS - 1)] += 1;
            }
            let total = vals.len() as f64;
            normalized.push(bins.iter().map(|&c| c as f64 / total).collect());
            counts.push(bins);
        }
        Ok(Histogram { counts, normalized })
    }

    pub fn channels(&self) -> usize {
        self.counts.len()
    }

    pub fn normalized(&self, channel: usize) -> &[f64] {
        &self.normalized[channel]
    }

    pub fn counts(&self, channel: usize) -> &[u64] {
        &self.counts[channel]
    }
}

/// Bhattacharyya distance between two normalized distributions:
/// −ln(Σ √(p·q)), with the coefficient clamped to [1e-12, 1] so disjoint
/// supports give a finite maximum and rounding can't produce a negative
/// distance.
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "distributions have {} and {} bins",
            p.len(),
            q.len()
        )));
    }
    for (name, d) in [("first", p), ("second", q)] {
        if d.iter().any(|&v| v < 0.0) {
            return Err(Error::Contract(format!(
                "{name} distribution has negative mass"
            )));
        }
        let sum: f64 = d.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "{name} distribution sums to {sum}, expected 1"
            )));
        }
    }
    let bc: f64 = p.iter().zip(q).map(|(&a, &b)| (a * b).sqrt()).sum();
    Ok(-bc.clamp(1e-12, 1.0).ln())
}

/// Mean Bhattacharyya distance over the channels of two histograms.
pub fn bhattacharyya_hist(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.channels() != b.channels() {
        return Err(Error::Dimension(format!(
            "histograms have {} and {} channels",
            a.channels(),
            b.channels()
        )));
    }
    let mut total = 0.0;
    for ch in 0..a.channels() {
        total += bhattacharyya(a.normalized(ch), b.normalized(ch))?;
    }
    Ok(total / a.channels() as f64)
}

type ChannelSamples = Vec<Vec<f64>>;

fn split_by_mask(image: &Tensor, mask: &Mask) -> Result<(ChannelSamples, ChannelSamples)> {
    let (h, w, c) = image.hwc()?;
    if mask.dims() != (h, w) {
        return Err(Error::Dimension(format!(
            "mask {:?} does not cover image {h}×{w}",
            mask.dims()
        )));
    }
    let mut fg = vec![Vec::new(); c];
    let mut bg = vec![Vec::new(); c];
    for y in 0..h {
        for x in 0..w {
            let side = if mask.get(y, x) { &mut fg } else { &mut bg };
            for (k, chan) in side.iter_mut().enumerate() {
                chan.push(image.at(y, x, k));
            }
        }
    }
    Ok((fg, bg))
}

/// Histogram contrast between object and background: the channel-averaged
/// Bhattacharyya distance between foreground and background value
/// histograms. Lower means the object blends in better.
pub fn global_contrast(image: &Tensor, mask: &Mask) -> Result<f64> {
    if mask.is_empty_mask() || mask.is_full() {
        return Err(Error::Contract(
            "contrast needs both a foreground and a background".into(),
        ));
    }
    let (fg, bg) = split_by_mask(image, mask)?;
    bhattacharyya_hist(
        &Histogram::from_channel_values(&fg)?,
        &Histogram::from_channel_values(&bg)?,
    )
}

/// Boundary-patch contrast: at every inner-boundary pixel, the absolute
/// difference between the patch's foreground mean and background mean
/// (channel-averaged), averaged over all boundary pixels. Values are
/// normalized by the representable channel range, which is 1.0 for the
/// [0, 1] images this crate works with. `patch` must be odd.
pub fn local_contrast(image: &Tensor, mask: &Mask, patch: usize) -> Result<f64> {
    if patch.is_multiple_of(2) || patch < 3 {
        return Err(Error::Contract(format!(
            "patch side must be odd and at least 3, got {patch}"
        )));
    }
    let (h, w, c) = image.hwc()?;
    if mask.dims() != (h, w) {
        return Err(Error::Dimension(format!(
            "mask {:?} does not cover image {h}×{w}",
            mask.dims()
        )));
    }
    let boundary = mask.inner_boundary();
    if boundary.is_empty() {
        return Err(Error::Contract("mask has no inner boundary".into()));
    }
    let r = patch / 2;
    let mut total = 0.0;
    let mut used = 0usize;
    for &(by, bx) in &boundary {
        let y0 = by.saturating_sub(r);
        let y1 = (by + r).min(h - 1);
        let x0 = bx.saturating_sub(r);
        let x1 = (bx + r).min(w - 1);
        let mut fg_sum = vec![0.0; c];
        let mut bg_sum = vec![0.0; c];
        let (mut fg_n, mut bg_n) = (0usize, 0usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (sum, n) = if mask.get(y, x) {
                    (&mut fg_sum, &mut fg_n)
                } else {
                    (&mut bg_sum, &mut bg_n)
                };
                for (k, s) in sum.iter_mut().enumerate() {
                    *s += image.at(y, x, k);
                }
                *n += 1;
            }
        }
        if fg_n == 0 || bg_n == 0 {
            continue; // one-sided patch carries no boundary contrast
        }
        let mut diff = 0.0;
        for k in 0..c {
            diff += (fg_sum[k] / fg_n as f64 - bg_sum[k] / bg_n as f64).abs();
        }
        total += diff / c as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Contract(
            "every boundary patch was one-sided".into(),
        ));
    }
    Ok(total / used as f64) // range-normalized; the value range is 1.0
}

// ---------------------------------------------------------------------------
// Dataset statistics
// ---------------------------------------------------------------------------

/// Count of images at one resolution.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct ResolutionCount {
    pub width: usize,
    pub height: usize,
    pub count: usize,
}

/// Images bucketed by how many instances they carry.
#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct InstanceBuckets {
    pub one: usize,
    pub two_to_four: usize,
    pub five_to_eight: usize,
    pub more_than_eight: usize,
}

/// Distribution report over an annotation set. Contrast vectors are empty
/// when no image loader is supplied.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StatsReport {
    pub resolutions: Vec<ResolutionCount>,
    pub instances_per_image: InstanceBuckets,
    pub size_ratios: Vec<f64>,
    pub global_contrast: Vec<f64>,
    pub local_contrast: Vec<f64>,
}

/// Loader giving pixel access for contrast statistics.
pub type ImageLoader<'a> = &'a (dyn Fn(&ImageInfo) -> Result<Tensor> + Sync);

/// Summarize an annotation set: resolution distribution, instances per
/// image, mask-size ratios (mask pixels over image pixels, in (0, 1]), and —
/// when `loader` provides pixels — global and boundary contrast per
/// annotation. Degenerate annotations (empty masks, masks without both
/// sides) are skipped rather than failing the whole report.
pub fn dataset_stats(set: &AnnotationSet, loader: Option<ImageLoader>) -> Result<StatsReport> {
    let mut by_resolution: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for im in &set.images {
        *by_resolution.entry((im.width, im.height)).or_default() += 1;
    }
    let resolutions = by_resolution
        .into_iter()
        .map(|((width, height), count)| ResolutionCount {
            width,
            height,
            count,
        })
        .collect();

    let mut per_image: BTreeMap<i64, usize> = BTreeMap::new();
    for ann in &set.annotations {
        *per_image.entry(ann.image_id).or_default() += 1;
    }
    let mut buckets = InstanceBuckets::default();
    for &n in per_image.values() {
        match n {
            1 => buckets.one += 1,
            2..=4 => buckets.two_to_four += 1,
            5..=8 => buckets.five_to_eight += 1,
            _ => buckets.more_than_eight += 1,
        }
    }

    // Decode all masks in parallel, keeping annotation order.
    let decoded: Vec<Result<(usize, Mask)>> = set
        .annotations
        .par_iter()
        .map(|ann| {
            let im = set
                .image(ann.image_id)
                .expect("load_coco guarantees referential integrity");
            let mask = decode_mask(&ann.segmentation, im.height, im.width)?;
            Ok((im.width * im.height, mask))
        })
        .collect();

    let mut size_ratios = Vec::new();
    let mut masks = Vec::new();
    for d in decoded {
        let (total_px, mask) = d?;
        let count = mask.count();
        if count > 0 {
            size_ratios.push(count as f64 / total_px as f64);
        }
        masks.push(mask);
    }

    let mut global = Vec::new();
    let mut local = Vec::new();
    if let Some(load) = loader {
        let mut cache: BTreeMap<i64, Tensor> = BTreeMap::new();
        for (ann, mask) in set.annotations.iter().zip(&masks) {
            if mask.is_empty_mask() || mask.is_full() {
                continue;
            }
            let image = match cache.entry(ann.image_id) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => {
                    let im = set.image(ann.image_id).expect("checked above");
                    e.insert(load(im)?)
                }
            };
            global.push(global_contrast(image, mask)?);
            if !mask.inner_boundary().is_empty() {
                local.push(local_contrast(image, mask, 5)?);
            }
        }
    }

    Ok(StatsReport {
        resolutions,
        instances_per_image: buckets,
        size_ratios,
        global_contrast: global,
        local_contrast: local,
    })
}

/// Render the report as one CSV document per distribution
/// (file name stem, CSV text with header row).
pub fn stats_csv_files(report: &StatsReport) -> Vec<(&'static str, String)> {
    let mut resolutions = String::from("width,height,count\n");
    for r in &report.resolutions {
        resolutions.push_str(&format!("{},{},{}\n", r.width, r.height, r.count));
    }
    let b = &report.instances_per_image;
    let instances = format!(
        "bucket,count\n1,{}\n2-4,{}\n5-8,{}\n>8,{}\n",
        b.one, b.two_to_four, b.five_to_eight, b.more_than_eight
    );
    let column = |name: &str, values: &[f64]| {
        let mut s = format!("{name}\n");
        for v in values {
            s.push_str(&format!("{v}\n"));
        }
        s
    };
    vec![
        ("resolutions", resolutions),
        ("instances_per_image", instances),
        ("mask_size_ratios", column("ratio", &report.size_ratios)),
        (
            "global_contrast",
            column("value", &report.global_contrast),
        ),
        ("local_contrast", column("value", &report.local_contrast)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Segmentation;
    use crate::tensor::testutil::seeded;
    use rand::Rng;

    fn strip_mask(w: usize, cols: std::ops::Range<usize>) -> Mask {
        Mask::from_fn(1, w, |_, x| cols.contains(&x))
    }

    #[test]
    fn perfect_predictions_score_full_marks() {
        let gt_a = Mask::from_fn(8, 8, |y, x| y < 4 && x < 4);
        let gt_b = Mask::from_fn(6, 6, |y, x| y > 2 && x > 2);
        let gts = vec![
            GroundTruth {
                image_id: 1,
                mask: gt_a.clone(),
            },
            GroundTruth {
                image_id: 2,
                mask: gt_b.clone(),
            },
        ];
        let preds = vec![
            ScoredInstance {
                image_id: 1,
                mask: gt_a,
                score: 1.0,
            },
            ScoredInstance {
                image_id: 2,
                mask: gt_b,
                score: 0.9,
            },
        ];
        let report = mask_ap(&preds, &gts).unwrap();
        assert_eq!(report.ap, 1.0);
        assert_eq!(report.ap50, 1.0);
        assert_eq!(report.ap75, 1.0);
        assert_eq!(report.n_gt, 2);
        assert_eq!(report.n_pred, 2);
    }

    #[test]
    fn no_predictions_means_zero_ap() {
        let gts = vec![GroundTruth {
            image_id: 1,
            mask: Mask::from_fn(4, 4, |y, _| y < 2),
        }];
        let report = mask_ap(&[], &gts).unwrap();
        assert_eq!(report.ap, 0.0);
        assert_eq!(report.ap50, 0.0);
        assert_eq!(report.n_pred, 0);
    }

    #[test]
    fn exact_iou_060_matches_three_thresholds() {
        let gts = vec![GroundTruth {
            image_id: 1,
            mask: strip_mask(6, 0..4),
        }];
        let preds = vec![ScoredInstance {
            image_id: 1,
            mask: strip_mask(6, 1..5),
            score: 0.9,
        }];
        // Overlap is 3 of 5 union pixels: IoU = 0.6 exactly.
        assert_eq!(
            preds[0].mask.iou(&gts[0].mask).unwrap().value,
            0.6
        );
        let report = mask_ap(&preds, &gts).unwrap();
        assert!((report.ap - 0.3).abs() < 1e-12, "ap = {}", report.ap);
        assert_eq!(report.ap50, 1.0);
        assert_eq!(report.ap75, 0.0);
    }

    #[test]
    fn matching_is_greedy_by_score() {
        // One GT; the higher-scored prediction has the worse overlap.
        let gt = strip_mask(20, 0..10);
        let gts = vec![GroundTruth {
            image_id: 1,
            mask: gt.clone(),
        }];
        let preds = vec![
            ScoredInstance {
                image_id: 1,
                mask: strip_mask(20, 0..6), // IoU 0.6
                score: 0.9,
            },
            ScoredInstance {
                image_id: 1,
                mask: gt, // IoU 1.0
                score: 0.8,
            },
        ];
        let report = mask_ap(&preds, &gts).unwrap();
        // At 0.50 the high scorer takes the GT: curve [1, 1/2] at recall 1.
        assert_eq!(report.ap50, 1.0);
        // At 0.75 only the second prediction matches: best precision 1/2.
        assert_eq!(report.ap75, 0.5);
    }

    #[test]
    fn report_depends_only_on_score_ordering() {
        let mut rng = seeded(80);
        let mut gts = Vec::new();
        let mut preds = Vec::new();
        for image in 0..3i64 {
            for _ in 0..3 {
                let y0 = rng.random_range(0..6);
                let x0 = rng.random_range(0..6);
                gts.push(GroundTruth {
                    image_id: image,
                    mask: Mask::from_fn(10, 10, |y, x| {
                        (y0..y0 + 4).contains(&y) && (x0..x0 + 4).contains(&x)
                    }),
                });
                let py = rng.random_range(0..6);
                let px = rng.random_range(0..6);
                preds.push(ScoredInstance {
                    image_id: image,
                    mask: Mask::from_fn(10, 10, |y, x| {
                        (py..py + 4).contains(&y) && (px..px + 4).contains(&x)
                    }),
                    score: rng.random_range(0.0..1.0),
                });
            }
        }
        let base = mask_ap(&preds, &gts).unwrap();
        let transformed: Vec<ScoredInstance> = preds
            .iter()
            .map(|p| ScoredInstance {
                image_id: p.image_id,
                mask: p.mask.clone(),
                score: 0.05 + p.score / 3.0, // strictly monotone remap
            })
            .collect();
        let remapped = mask_ap(&transformed, &gts).unwrap();
        assert_eq!(base.ap, remapped.ap);
        assert_eq!(base.ap50, remapped.ap50);
        assert_eq!(base.ap75, remapped.ap75);
        for (a, b) in base.per_threshold.iter().zip(&remapped.per_threshold) {
            assert_eq!(a.precision, b.precision);
            assert_eq!(a.recall, b.recall);
        }
    }

    #[test]
    fn ap_invariants_hold_on_random_instances() {
        let mut rng = seeded(81);
        for _ in 0..10 {
            let mut gts = Vec::new();
            let mut preds = Vec::new();
            for image in 0..2i64 {
                for _ in 0..rng.random_range(1..4) {
                    let y0 = rng.random_range(0..5);
                    gts.push(GroundTruth {
                        image_id: image,
                        mask: Mask::from_fn(8, 8, |y, _| (y0..y0 + 3).contains(&y)),
                    });
                }
                for _ in 0..rng.random_range(0..4) {
                    let y0 = rng.random_range(0..5);
                    preds.push(ScoredInstance {
                        image_id: image,
                        mask: Mask::from_fn(8, 8, |y, _| (y0..y0 + 3).contains(&y)),
                        score: rng.random_range(0.0..1.0),
                    });
                }
            }
            let r = mask_ap(&preds, &gts).unwrap();
            assert!(r.ap >= 0.0 && r.ap <= r.ap50 && r.ap50 <= 1.0);
            assert!(r.ap75 >= 0.0 && r.ap75 <= r.ap50);
            let mean: f64 =
                r.per_threshold.iter().map(|c| c.ap).sum::<f64>() / IOU_THRESHOLDS.len() as f64;
            assert!((r.ap - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_dims_within_an_image_are_rejected() {
        let gts = vec![GroundTruth {
            image_id: 1,
            mask: Mask::zeros(4, 4),
        }];
        let preds = vec![ScoredInstance {
            image_id: 1,
            mask: Mask::zeros(5, 4),
            score: 0.5,
        }];
        assert!(matches!(mask_ap(&preds, &gts), Err(Error::Dimension(_))));
    }

    #[test]
    fn bhattacharyya_fixtures() {
        let half = vec![0.5, 0.5];
        let point = vec![1.0, 0.0];
        assert_eq!(bhattacharyya(&half, &half).unwrap(), 0.0);
        let d = bhattacharyya(&half, &point).unwrap();
        assert!((d - 0.5 * 2f64.ln()).abs() < 1e-12, "{d}");
        assert!((d - 0.3466).abs() < 1e-4);

        let left = vec![1.0, 0.0];
        let right = vec![0.0, 1.0];
        let clamped = bhattacharyya(&left, &right).unwrap();
        assert!((clamped - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!((clamped - 27.63).abs() < 0.01);

        // Symmetry and nonnegativity.
        let p = vec![0.2, 0.3, 0.5];
        let q = vec![0.6, 0.1, 0.3];
        let a = bhattacharyya(&p, &q).unwrap();
        let b = bhattacharyya(&q, &p).unwrap();
        assert_eq!(a, b);
        assert!(a >= 0.0);

        assert!(matches!(
            bhattacharyya(&[0.5, 0.6], &half),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            bhattacharyya(&[1.0], &half),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn global_contrast_fixtures() {
        let mask = Mask::from_fn(8, 8, |_, x| x < 4);
        let uniform = Tensor::full(&[8, 8, 3], 0.4).unwrap();
        assert_eq!(global_contrast(&uniform, &mask).unwrap(), 0.0);

        let split = Tensor::from_fn(8, 8, 3, |_, x, _| if x < 4 { 0.0 } else { 1.0 });
        let extreme = global_contrast(&split, &mask).unwrap();
        assert!((extreme - 27.63).abs() < 0.01, "disjoint bins clamp: {extreme}");

        assert!(matches!(
            global_contrast(&uniform, &Mask::zeros(8, 8)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            global_contrast(&uniform, &Mask::from_fn(8, 8, |_, _| true)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn local_contrast_fixtures() {
        let mask = Mask::from_fn(8, 8, |_, x| x < 4);
        let uniform = Tensor::full(&[8, 8, 2], 0.7).unwrap();
        // Patch means of a constant image agree up to summation rounding.
        assert!(local_contrast(&uniform, &mask, 5).unwrap() < 1e-12);

        // Hard black/white edge aligned with the mask boundary.
        let split = Tensor::from_fn(8, 8, 1, |_, x, _| if x < 4 { 0.0 } else { 1.0 });
        assert_eq!(local_contrast(&split, &mask, 5).unwrap(), 1.0);

        assert!(matches!(
            local_contrast(&uniform, &Mask::from_fn(8, 8, |_, _| true), 5),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            local_contrast(&uniform, &mask, 4),
            Err(Error::Contract(_))
        ));
    }

    fn stats_fixture() -> AnnotationSet {
        let mut set = AnnotationSet::default();
        set.images.push(ImageInfo {
            id: 1,
            file_name: "a.png".into(),
            width: 100,
            height: 100,
        });
        set.images.push(ImageInfo {
            id: 2,
            file_name: "b.png".into(),
            width: 64,
            height: 32,
        });
        set.images.push(ImageInfo {
            id: 3,
            file_name: "c.png".into(),
            width: 100,
            height: 100,
        });
        // 50 set pixels on image 1 (10000 px): ratio 0.005.
        set.annotations.push(crate::ingest::Annotation {
            image_id: 1,
            segmentation: Segmentation::Rle {
                size: (100, 100),
                counts: vec![20, 50, 9930],
            },
            score: None,
            iscrowd: false,
        });
        // Three annotations on image 2.
        for i in 0..3 {
            set.annotations.push(crate::ingest::Annotation {
                image_id: 2,
                segmentation: Segmentation::Rle {
                    size: (32, 64),
                    counts: vec![100 * (i + 1), 64, 32 * 64 - 64 - 100 * (i + 1)],
                },
                score: None,
                iscrowd: false,
            });
        }
        set
    }

    #[test]
    fn dataset_stats_fixture() {
        let report = dataset_stats(&stats_fixture(), None).unwrap();
        assert_eq!(
            report.resolutions,
            vec![
                ResolutionCount {
                    width: 64,
                    height: 32,
                    count: 1
                },
                ResolutionCount {
                    width: 100,
                    height: 100,
                    count: 2
                },
            ]
        );
        assert_eq!(report.instances_per_image.one, 1);
        assert_eq!(report.instances_per_image.two_to_four, 1);
        assert_eq!(report.instances_per_image.five_to_eight, 0);
        assert_eq!(report.size_ratios.len(), 4);
        assert_eq!(report.size_ratios[0], 0.005);
        assert!(report
            .size_ratios
            .iter()
            .all(|&r| r > 0.0 && r <= 1.0));
        assert!(report.global_contrast.is_empty());
    }

    #[test]
    fn dataset_stats_with_pixels_fills_contrast() {
        let set = stats_fixture();
        let loader: ImageLoader = &|im: &ImageInfo| {
            Ok(Tensor::from_fn(im.height, im.width, 3, |y, x, _| {
                ((y * 7 + x * 13) % 96) as f64 / 110.0 + 0.05
            }))
        };
        let report = dataset_stats(&set, Some(loader)).unwrap();
        assert_eq!(report.global_contrast.len(), 4);
        assert_eq!(report.local_contrast.len(), 4);
        assert!(report.global_contrast.iter().all(|&v| v >= 0.0));
        assert!(report
            .local_contrast
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn empty_set_gives_all_zero_report() {
        let report = dataset_stats(&AnnotationSet::default(), None).unwrap();
        assert!(report.resolutions.is_empty());
        assert_eq!(report.instances_per_image, InstanceBuckets::default());
        assert!(report.size_ratios.is_empty());
        assert!(report.global_contrast.is_empty());
        assert!(report.local_contrast.is_empty());
    }

    #[test]
    fn csv_files_have_headers_and_rows() {
        let report = dataset_stats(&stats_fixture(), None).unwrap();
        let files = stats_csv_files(&report);
        let by_name: BTreeMap<&str, &String> =
            files.iter().map(|(n, s)| (*n, s)).collect();
        let res = by_name["resolutions"];
        assert!(res.starts_with("width,height,count\n"));
        assert_eq!(res.lines().count(), 3);
        let inst = by_name["instances_per_image"];
        assert!(inst.contains("2-4,1"));
        let ratios = by_name["mask_size_ratios"];
        assert!(ratios.starts_with("ratio\n"));
        assert!(ratios.contains("0.005"));
    }
}
