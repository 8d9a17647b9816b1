//! Command-line entry point for the frequency-domain camouflage toolkit.
//!
//! Every subcommand validates its flags before writing anything, logs
//! progress to stderr, and writes data only to the declared output paths.
//! Exit codes: 0 on success, 1 on operation errors, 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use camofreq::cbom;
use camofreq::evalstat::{self, GroundTruth, ScoredInstance};
use camofreq::fdtim;
use camofreq::imageio;
use camofreq::ingest::{self, Prediction};
use camofreq::mffam;
use camofreq::pipeline::{
    self,
    ablate::{ablation_csv, run_ablation, AblationGrid, AblationSpec},
    ModelConfig,
};
use camofreq::tensor::{ParamStore, Tensor};
use camofreq::{Error, Result};

#[derive(Parser)]
#[command(
    name = "camofreq",
    version,
    propagate_version = true,
    about = "Frequency-domain camouflaged-instance segmentation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply channel-balance correction to an RGB image for visualization.
    Cbom(CbomArgs),
    /// Remove the K largest-amplitude frequency components from an image.
    Fdtim(FdtimArgs),
    /// Decompose an image into Haar wavelet bands.
    Dwt(DwtArgs),
    /// Train the segmentation model on synthetic camouflage scenes.
    Train(TrainArgs),
    /// Segment one image with trained parameters.
    Infer(InferArgs),
    /// Score predictions against ground-truth annotations (instance AP).
    Eval(EvalArgs),
    /// Dataset statistics: resolutions, instance counts, sizes, contrast.
    Stats(StatsArgs),
    /// Train over a configuration sweep and emit AP per setting as CSV.
    Ablate(AblateArgs),
    /// Generate synthetic camouflage scenes to disk.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CbomArgs {
    /// Input RGB PNG.
    #[arg(long)]
    input: PathBuf,
    /// Output PNG with the correction applied.
    #[arg(long)]
    out: PathBuf,
    /// Mixing weight λ in [0, 1].
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    /// Parameter file providing the gate for 3 channels under the "cbom"
    /// prefix; omitted → a zero-initialized (untrained) gate.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct FdtimArgs {
    /// Input RGB PNG.
    #[arg(long)]
    input: PathBuf,
    /// Number of frequency components to remove per channel.
    #[arg(long)]
    k: usize,
    /// Keep the DC component (image mean) even if it ranks in the top K.
    #[arg(long)]
    protect_dc: bool,
    /// Output PNG of the filtered image.
    #[arg(long)]
    out: PathBuf,
    /// Optional grayscale PNG of the log-scaled amplitude spectrum.
    #[arg(long)]
    spectrum_out: Option<PathBuf>,
}

#[derive(Args)]
struct DwtArgs {
    /// Input RGB PNG.
    #[arg(long)]
    input: PathBuf,
    /// Directory for ll/lh/hl/hh PNGs and the band-energy manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Model configuration JSON (unknown keys rejected).
    #[arg(long)]
    config: PathBuf,
    /// Output parameter file.
    #[arg(long)]
    out: PathBuf,
    /// Output CSV training log (step,loss).
    #[arg(long)]
    log: PathBuf,
    /// Number of synthetic training scenes.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    /// Scene contrast in [0, 1].
    #[arg(long, default_value_t = 0.6)]
    contrast: f64,
    /// Boundary blur sigma in pixels.
    #[arg(long, default_value_t = 1.0)]
    blur: f64,
    /// Minimum object count per scene.
    #[arg(long, default_value_t = 1)]
    min_instances: usize,
    /// Maximum object count per scene.
    #[arg(long, default_value_t = 4)]
    max_instances: usize,
}

#[derive(Args)]
struct InferArgs {
    /// Trained parameter file.
    #[arg(long)]
    params: PathBuf,
    /// Input RGB PNG (must match the configured resolution).
    #[arg(long)]
    input: PathBuf,
    /// Output binary foreground mask PNG.
    #[arg(long)]
    out: PathBuf,
    /// Output instance JSON (RLE segmentation + score per instance).
    #[arg(long)]
    instances: PathBuf,
    /// Model configuration JSON; omitted → defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Foreground probability threshold.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions JSON (as written by `infer`).
    #[arg(long)]
    preds: PathBuf,
    /// Ground-truth annotations JSON (COCO-style).
    #[arg(long)]
    gts: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for per-image computation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct StatsArgs {
    /// Annotations JSON (COCO-style).
    #[arg(long)]
    annotations: PathBuf,
    /// Image directory; omitted → contrast statistics are skipped.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output directory for one CSV per distribution.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for per-image computation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum GridArg {
    Lambda,
    K,
    Modules,
    Freq,
}

#[derive(Args)]
struct AblateArgs {
    /// Which sweep to run.
    #[arg(long, value_enum)]
    grid: GridArg,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Seed for data generation and initialization.
    #[arg(long)]
    seed: u64,
    /// Base configuration JSON; omitted → the harness desk defaults
    /// (64×64 scenes, 320 SGD steps per setting).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training scenes shared by all settings.
    #[arg(long, default_value_t = 48)]
    train_samples: usize,
    /// Held-out scenes shared by all settings.
    #[arg(long, default_value_t = 16)]
    eval_samples: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Seed for scene generation.
    #[arg(long)]
    seed: u64,
    /// Output directory (images + annotations.json).
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 8)]
    samples: usize,
    /// Square scene side in pixels (min 32).
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Scene contrast in [0, 1].
    #[arg(long, default_value_t = 0.6)]
    contrast: f64,
    /// Boundary blur sigma in pixels.
    #[arg(long, default_value_t = 1.0)]
    blur: f64,
    /// Minimum object count per scene.
    #[arg(long, default_value_t = 1)]
    min_instances: usize,
    /// Maximum object count per scene.
    #[arg(long, default_value_t = 4)]
    max_instances: usize,
    /// Worker threads for scene generation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cbom(a) => run_cbom(a),
        Command::Fdtim(a) => run_fdtim(a),
        Command::Dwt(a) => run_dwt(a),
        Command::Train(a) => run_train(a),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::Stats(a) => run_stats(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn read_config(path: &Path) -> Result<ModelConfig> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ModelConfig::from_json(&src)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::Contract("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))
}

fn run_cbom(a: CbomArgs) -> Result<()> {
    let image = imageio::load_image(&a.input)?;
    let params = match &a.params {
        Some(p) => ParamStore::load(p)?,
        None => {
            let mut p = ParamStore::new(0);
            cbom::register_channel_bias(&mut p, "cbom", 3)?;
            p
        }
    };
    let corrected = cbom::apply(&image, &params, "cbom", a.lambda)?;
    imageio::save_image(&corrected, &a.out)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn run_fdtim(a: FdtimArgs) -> Result<()> {
    let image = imageio::load_image(&a.input)?;
    let spectrum = fdtim::dft2(&image)?;
    if let Some(path) = &a.spectrum_out {
        let amp = fdtim::amplitude(&spectrum);
        let (h, w, c) = amp.hwc()?;
        let mut plane = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                let mean: f64 = (0..c).map(|ch| amp.at(y, x, ch)).sum::<f64>() / c as f64;
                plane[y * w + x] = mean.ln_1p();
            }
        }
        let max = plane.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            for v in &mut plane {
                *v /= max;
            }
        }
        let gray = Tensor::new(&[h, w, 1], plane)?;
        imageio::save_image(&gray, path)?;
        eprintln!("wrote {}", path.display());
    }
    let (filtered, report) = fdtim::topk_filter_detailed(&spectrum, a.k, a.protect_dc)?;
    let out = fdtim::idft2(&filtered)?;
    imageio::save_image(&out, &a.out)?;
    let removed: usize = report.cells_removed.iter().sum();
    eprintln!(
        "removed {removed} spectrum cells across {} channels; wrote {}",
        report.cells_removed.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct BandEnergies {
    ll: f64,
    lh: f64,
    hl: f64,
    hh: f64,
}

fn run_dwt(a: DwtArgs) -> Result<()> {
    let image = imageio::load_image(&a.input)?;
    let bands = mffam::dwt2(&image, 1)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let energy = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
    let manifest = BandEnergies {
        ll: energy(&bands.ll),
        lh: energy(&bands.lh),
        hl: energy(&bands.hl),
        hh: energy(&bands.hh),
    };
    for (name, band) in [
        ("ll", &bands.ll),
        ("lh", &bands.lh),
        ("hl", &bands.hl),
        ("hh", &bands.hh),
    ] {
        let (h, w, c) = band.hwc()?;
        let mut plane = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] =
                    (0..c).map(|ch| band.at(y, x, ch)).sum::<f64>() / c as f64;
            }
        }
        let (lo, hi) = plane
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let norm: Vec<f64> = if hi > lo {
            plane.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; h * w]
        };
        let gray = Tensor::new(&[h, w, 1], norm)?;
        let path = a.out_dir.join(format!("{name}.png"));
        imageio::save_image(&gray, &path)?;
        eprintln!("wrote {}", path.display());
    }
    let manifest_path = a.out_dir.join("band_energies.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Format(format!("manifest: {e}")))?,
    )?;
    eprintln!("wrote {}", manifest_path.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let cfg = read_config(&a.config)?;
    eprintln!(
        "generating {} scenes at {}×{} (contrast {}, blur {})",
        a.samples, cfg.input_hw.0, cfg.input_hw.1, a.contrast, a.blur
    );
    let data = pipeline::synth_camo(
        cfg.seed,
        a.samples,
        cfg.input_hw,
        a.contrast,
        a.blur,
        (a.min_instances, a.max_instances),
    )?;
    eprintln!(
        "training {} steps (lr {}, batch {})",
        cfg.training.steps, cfg.training.learning_rate, cfg.training.batch_size
    );
    let (params, log) = pipeline::fit(&data, &cfg)?;
    params.save(&a.out)?;
    let mut csv = String::from("step,loss\n");
    for s in &log {
        csv.push_str(&format!("{},{}\n", s.step, s.loss));
    }
    std::fs::write(&a.log, csv)?;
    if let Some(last) = log.last() {
        eprintln!("final loss {:.6}", last.loss);
    }
    eprintln!("wrote {} and {}", a.out.display(), a.log.display());
    Ok(())
}

fn run_infer(a: InferArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => ModelConfig::default(),
    };
    let params = ParamStore::load(&a.params)?;
    let image = imageio::load_image(&a.input)?;
    let out = pipeline::forward(&image, &params, &cfg)?;
    let instances = pipeline::predict_instances(&out.mask_logits, &out.salience, a.threshold)?;
    let (h, w) = cfg.input_hw;
    let union = pipeline::union_masks(
        h,
        w,
        &instances.iter().map(|i| i.mask.clone()).collect::<Vec<_>>(),
    )?;
    imageio::save_mask(&union, &a.out)?;
    let preds: Vec<Prediction> = instances
        .into_iter()
        .map(|i| Prediction {
            image_id: 0,
            mask: i.mask,
            score: i.score,
        })
        .collect();
    ingest::write_predictions(&preds, &a.instances)?;
    eprintln!(
        "{} instances; wrote {} and {}",
        preds.len(),
        a.out.display(),
        a.instances.display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let pool = thread_pool(a.jobs)?;
    let preds = ingest::load_predictions(&a.preds)?;
    let set = ingest::load_coco(&a.gts)?;
    let mut gts = Vec::new();
    for ann in &set.annotations {
        let info = set
            .image(ann.image_id)
            .ok_or_else(|| Error::Validation(format!("unknown image id {}", ann.image_id)))?;
        gts.push(GroundTruth {
            image_id: ann.image_id,
            mask: ingest::decode_mask(&ann.segmentation, info.height, info.width)?,
        });
    }
    let scored: Vec<ScoredInstance> = preds
        .into_iter()
        .map(|p| ScoredInstance {
            image_id: p.image_id,
            mask: p.mask,
            score: p.score,
        })
        .collect();
    let report = pool.install(|| evalstat::mask_ap(&scored, &gts))?;
    std::fs::write(
        &a.out,
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Format(format!("report: {e}")))?,
    )?;
    eprintln!(
        "ap {:.4} ap50 {:.4} ap75 {:.4} over {} predictions / {} ground truths",
        report.ap, report.ap50, report.ap75, report.n_pred, report.n_gt
    );
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn run_stats(a: StatsArgs) -> Result<()> {
    let pool = thread_pool(a.jobs)?;
    let set = ingest::load_coco(&a.annotations)?;
    let report = pool.install(|| match &a.images {
        Some(dir) => {
            let loader = |info: &ingest::ImageInfo| imageio::load_image(&dir.join(&info.file_name));
            evalstat::dataset_stats(&set, Some(&loader))
        }
        None => evalstat::dataset_stats(&set, None),
    })?;
    std::fs::create_dir_all(&a.out)?;
    for (name, csv) in evalstat::stats_csv_files(&report) {
        let path = a.out.join(format!("{name}.csv"));
        std::fs::write(&path, csv)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn run_ablate(a: AblateArgs) -> Result<()> {
    let grid = match a.grid {
        GridArg::Lambda => AblationGrid::Lambda,
        GridArg::K => AblationGrid::K,
        GridArg::Modules => AblationGrid::Modules,
        GridArg::Freq => AblationGrid::Freq,
    };
    let mut spec = AblationSpec::desk_default(a.seed);
    if let Some(path) = &a.config {
        spec.base = read_config(path)?;
        spec.base.seed = a.seed;
    }
    spec.train_samples = a.train_samples;
    spec.eval_samples = a.eval_samples;
    let rows = run_ablation(grid, &spec, |msg| eprintln!("{msg}"))?;
    std::fs::write(&a.out, ablation_csv(&rows))?;
    eprintln!("wrote {} ({} settings)", a.out.display(), rows.len());
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let pool = thread_pool(a.jobs)?;
    std::fs::create_dir_all(&a.out)?;
    let samples: Vec<pipeline::SynthSample> = pool.install(|| {
        use rayon::prelude::*;
        (0..a.samples)
            .into_par_iter()
            .map(|i| {
                pipeline::generate_sample(
                    a.seed,
                    i,
                    (a.size, a.size),
                    a.contrast,
                    a.blur,
                    (a.min_instances, a.max_instances),
                )
            })
            .collect::<Result<_>>()
    })?;
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let file_name = format!("img_{i:05}.png");
        imageio::save_image(&s.image, &a.out.join(&file_name))?;
        images.push(serde_json::json!({
            "id": i as i64,
            "file_name": file_name,
            "width": a.size,
            "height": a.size,
        }));
        for m in &s.instance_masks {
            let counts = ingest::encode_rle(m);
            let (h, w) = m.dims();
            annotations.push(serde_json::json!({
                "image_id": i as i64,
                "iscrowd": 0,
                "segmentation": {"size": [h, w], "counts": counts},
            }));
        }
    }
    let doc = serde_json::json!({"images": images, "annotations": annotations});
    let path = a.out.join("annotations.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(format!("{e}")))?,
    )?;
    eprintln!(
        "wrote {} scenes and {}",
        samples.len(),
        path.display()
    );
    Ok(())
}
