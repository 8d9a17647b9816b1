//! Ablation harness: train the model under systematic configuration sweeps
//! (mixing weight λ, spectrum removal budget K, module toggles, frequency
//! paths) on a shared synthetic dataset and report instance AP plus mean
//! foreground IoU per setting as CSV rows.

use serde::Serialize;

use crate::error::Result;
use crate::evalstat::{iou, mask_ap, APReport, GroundTruth, ScoredInstance};
use crate::mask::Mask;
use crate::pipeline::{
    default_k_filter, fit, forward, predict_instances, synth_camo, union_masks, ModelConfig,
    SynthSample, Toggles, TrainingConfig,
};
use crate::tensor::ParamStore;

/// Which sweep to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationGrid {
    /// λ ∈ {0, 0.2, 0.4, 0.6, 0.8, 1.0}, all modules on.
    Lambda,
    /// K log-spaced: 0 then powers of 8 up to 1/30 of the spectrum size.
    K,
    /// All modules on, each module knocked out alone, everything off.
    Modules,
    /// The 2×2 lattice over the two frequency paths (low, high).
    Freq,
}

/// Shared experimental setup for one harness run.
#[derive(Debug, Clone)]
pub struct AblationSpec {
    /// Base configuration every variant starts from (training budget,
    /// resolution, default λ/K, seed).
    pub base: ModelConfig,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub contrast: f64,
    pub blur_sigma: f64,
    pub instances: (usize, usize),
}

impl AblationSpec {
    /// A budget small enough to sweep a dozen configurations in minutes:
    /// 64×64 scenes and a few hundred SGD steps per variant.
    pub fn desk_default(seed: u64) -> AblationSpec {
        let input_hw = (64, 64);
        AblationSpec {
            base: ModelConfig {
                input_hw,
                k_filter: default_k_filter(input_hw),
                seed,
                training: TrainingConfig {
                    steps: 320,
                    learning_rate: 0.25,
                    batch_size: 4,
                },
                ..ModelConfig::default()
            },
            train_samples: 48,
            eval_samples: 16,
            contrast: 0.6,
            blur_sigma: 1.0,
            instances: (1, 4),
        }
    }
}

/// One trained-and-evaluated configuration.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub lambda: f64,
    pub k_filter: usize,
    pub cbom: bool,
    pub fdtim: bool,
    pub mffam_low: bool,
    pub mffam_high: bool,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub mean_iou: f64,
}

/// The K sweep for a given spectrum size: 0, then powers of 8 while they
/// stay at or below 1/30 of the component count.
pub fn k_grid(area: usize) -> Vec<usize> {
    let bound = area / 30;
    let mut grid = vec![0];
    let mut k = 8;
    while k <= bound {
        grid.push(k);
        k *= 8;
    }
    grid
}

fn variants(grid: AblationGrid, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let all_on = Toggles {
        cbom: true,
        fdtim: true,
        mffam_low: true,
        mffam_high: true,
    };
    match grid {
        AblationGrid::Lambda => [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|&l| {
                let mut cfg = base.clone();
                cfg.toggles = all_on;
                cfg.lambda = l;
                (format!("lambda_{l}"), cfg)
            })
            .collect(),
        AblationGrid::K => k_grid(base.input_hw.0 * base.input_hw.1)
            .into_iter()
            .map(|k| {
                let mut cfg = base.clone();
                cfg.toggles = all_on;
                cfg.k_filter = k;
                (format!("k_{k}"), cfg)
            })
            .collect(),
        AblationGrid::Modules => {
            let mk = |name: &str, t: Toggles| {
                let mut cfg = base.clone();
                cfg.toggles = t;
                (name.to_string(), cfg)
            };
            vec![
                mk("all_on", all_on),
                mk("wo_cbom", Toggles { cbom: false, ..all_on }),
                mk("wo_fdtim", Toggles { fdtim: false, ..all_on }),
                mk(
                    "wo_mffam",
                    Toggles {
                        mffam_low: false,
                        mffam_high: false,
                        ..all_on
                    },
                ),
                mk(
                    "all_off",
                    Toggles {
                        cbom: false,
                        fdtim: false,
                        mffam_low: false,
                        mffam_high: false,
                    },
                ),
            ]
        }
        AblationGrid::Freq => [(true, true), (true, false), (false, true), (false, false)]
            .iter()
            .map(|&(low, high)| {
                let mut cfg = base.clone();
                cfg.toggles = Toggles {
                    mffam_low: low,
                    mffam_high: high,
                    ..all_on
                };
                let name = match (low, high) {
                    (true, true) => "freq_low_high",
                    (true, false) => "freq_low_only",
                    (false, true) => "freq_high_only",
                    (false, false) => "freq_none",
                };
                (name.to_string(), cfg)
            })
            .collect(),
    }
}

/// Instance AP and mean foreground IoU of a trained model over an
/// evaluation set.
pub fn evaluate_model(
    params: &ParamStore,
    cfg: &ModelConfig,
    eval_set: &[SynthSample],
) -> Result<(APReport, f64)> {
    let (h, w) = cfg.input_hw;
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut iou_sum = 0.0;
    for (i, sample) in eval_set.iter().enumerate() {
        let out = forward(&sample.image, params, cfg)?;
        for inst in predict_instances(&out.mask_logits, &out.salience, 0.5)? {
            preds.push(ScoredInstance {
                image_id: i as i64,
                mask: inst.mask,
                score: inst.score,
            });
        }
        for m in &sample.instance_masks {
            gts.push(GroundTruth {
                image_id: i as i64,
                mask: m.clone(),
            });
        }
        let pred_union = Mask::from_tensor(&out.mask_logits.sigmoid(), 0.5)?;
        let gt_union = union_masks(h, w, &sample.instance_masks)?;
        iou_sum += iou(&pred_union, &gt_union)?.value;
    }
    let report = mask_ap(&preds, &gts)?;
    Ok((report, iou_sum / eval_set.len() as f64))
}

/// Train and evaluate every variant of `grid` on a shared train/eval split.
/// Progress goes to `progress` (one line per variant).
pub fn run_ablation(
    grid: AblationGrid,
    spec: &AblationSpec,
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRow>> {
    spec.base.validate()?;
    let train = synth_camo(
        spec.base.seed,
        spec.train_samples,
        spec.base.input_hw,
        spec.contrast,
        spec.blur_sigma,
        spec.instances,
    )?;
    let eval_set = synth_camo(
        spec.base.seed ^ 0x5EED_0E7A_1B2C_3D4E,
        spec.eval_samples,
        spec.base.input_hw,
        spec.contrast,
        spec.blur_sigma,
        spec.instances,
    )?;
    let mut rows = Vec::new();
    for (setting, cfg) in variants(grid, &spec.base) {
        progress(&format!("training {setting}"));
        let (params, _) = fit(&train, &cfg)?;
        let (report, mean_iou) = evaluate_model(&params, &cfg, &eval_set)?;
        progress(&format!(
            "{setting}: ap {:.3} ap50 {:.3} mean_iou {:.3}",
            report.ap, report.ap50, mean_iou
        ));
        rows.push(AblationRow {
            setting,
            lambda: cfg.lambda,
            k_filter: cfg.k_filter,
            cbom: cfg.toggles.cbom,
            fdtim: cfg.toggles.fdtim,
            mffam_low: cfg.toggles.mffam_low,
            mffam_high: cfg.toggles.mffam_high,
            ap: report.ap,
            ap50: report.ap50,
            ap75: report.ap75,
            mean_iou,
        });
    }
    Ok(rows)
}

/// Render rows as CSV with a header line.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("setting,lambda,k_filter,cbom,fdtim,mffam_low,mffam_high,ap,ap50,ap75,mean_iou\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.setting,
            r.lambda,
            r.k_filter,
            r.cbom,
            r.fdtim,
            r.mffam_low,
            r.mffam_high,
            r.ap,
            r.ap50,
            r.ap75,
            r.mean_iou
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_grid_is_log_spaced_under_the_bound() {
        assert_eq!(k_grid(128 * 128), vec![0, 8, 64, 512]);
        assert_eq!(k_grid(64 * 64), vec![0, 8, 64]);
        assert_eq!(k_grid(1024 * 1024), vec![0, 8, 64, 512, 4096, 32768]);
        assert_eq!(k_grid(64), vec![0]);
    }

    #[test]
    fn variant_tables_have_the_pinned_shapes() {
        let base = AblationSpec::desk_default(1).base;
        let lambda = variants(AblationGrid::Lambda, &base);
        assert_eq!(lambda.len(), 6);
        assert_eq!(lambda[0].0, "lambda_0");
        assert_eq!(lambda[0].1.lambda, 0.0);
        assert_eq!(lambda[5].0, "lambda_1");
        assert_eq!(lambda[5].1.lambda, 1.0);

        let modules = variants(AblationGrid::Modules, &base);
        let names: Vec<&str> = modules.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            ["all_on", "wo_cbom", "wo_fdtim", "wo_mffam", "all_off"]
        );
        assert!(modules[4].1.toggles == Toggles {
            cbom: false,
            fdtim: false,
            mffam_low: false,
            mffam_high: false
        });

        let freq = variants(AblationGrid::Freq, &base);
        assert_eq!(freq.len(), 4);
        assert!(freq.iter().all(|(_, c)| c.toggles.cbom && c.toggles.fdtim));
    }

    #[test]
    fn csv_has_header_and_one_line_per_row() {
        let rows = vec![AblationRow {
            setting: "all_on".into(),
            lambda: 0.2,
            k_filter: 8,
            cbom: true,
            fdtim: true,
            mffam_low: true,
            mffam_high: true,
            ap: 0.5,
            ap50: 0.75,
            ap75: 0.25,
            mean_iou: 0.6,
        }];
        let csv = ablation_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("setting,lambda,k_filter"));
        assert_eq!(lines[1], "all_on,0.2,8,true,true,true,true,0.5,0.75,0.25,0.6");
    }

    #[test]
    #[ignore = "manual calibration probe"]
    fn ablation_probe() {
        let grid = match std::env::var("PROBE_GRID").as_deref() {
            Ok("lambda") => AblationGrid::Lambda,
            Ok("k") => AblationGrid::K,
            Ok("freq") => AblationGrid::Freq,
            _ => AblationGrid::Modules,
        };
        let t0 = std::time::Instant::now();
        let spec = AblationSpec::desk_default(7);
        let rows = run_ablation(grid, &spec, |m| eprintln!("[{:?}] {m}", t0.elapsed())).unwrap();
        eprintln!("{}", ablation_csv(&rows));
        eprintln!("total {:?}", t0.elapsed());
    }

    #[test]
    fn harness_smoke_run_on_a_tiny_budget() {
        // Minimal budget: the point is plumbing, not model quality.
        let mut spec = AblationSpec::desk_default(3);
        spec.base.input_hw = (32, 32);
        spec.base.k_filter = 8;
        spec.base.channels = [4, 6, 8, 10];
        spec.base.training.steps = 2;
        spec.train_samples = 2;
        spec.eval_samples = 2;
        let rows = run_ablation(AblationGrid::Freq, &spec, |_| {}).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(r.ap >= 0.0 && r.ap <= 1.0);
            assert!(r.mean_iou >= 0.0 && r.mean_iou <= 1.0);
        }
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
    }
}
