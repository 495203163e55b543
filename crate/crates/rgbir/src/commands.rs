//! Pipeline commands behind the `rgbir` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rgbir_core::dataset::{split_dataset, ImagePair};
use rgbir_core::detector::{detect_ir_as_grayscale, train_detector, DetectorModel};
use rgbir_core::eval::{evaluate, image_f1, render_report, DetectorKind, EvalOptions, EvalReport, GroundTruth, LatencyStats, Split};
use rgbir_core::fusion::{fuse, oracle_fuse, Detect, FusionResult};
use rgbir_core::ian::{make_selection_labels, train_ian, training_set, IanModel};
use rgbir_core::style::{build_stylized_dataset, train_translator, ObjectMask, StyleSource, StylizedDataset};
use rgbir_core::thermal::generate_paired_dataset;
use rgbir_core::{Detection, Image, Modality};

use crate::bench::benchmark_latency;
use crate::checkpoint::{load_detector, load_ian, load_translator, save_detector, save_ian, save_translator};
use crate::config::{MaskSource, PipelineConfig};
use crate::io::{
    load_dataset, read_detection_file, read_json, read_manifest, write_dataset, write_detection_dir, write_json, write_png, write_text,
    DatasetManifest,
};
use crate::overlay::draw_detections;
use crate::records::{write_fusion_csv, write_loss_csv, write_selection_labels, write_translator_csv};
use crate::IoError;

/// Bad flags or configuration. Maps to exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(IoError::Config { .. }) = cause.downcast_ref::<IoError>() {
            return 1;
        }
        let core = cause
            .downcast_ref::<rgbir_core::Error>()
            .or_else(|| match cause.downcast_ref::<IoError>() {
                Some(IoError::Core(e)) => Some(e),
                _ => None,
            });
        if let Some(rgbir_core::Error::NonFiniteLoss { .. }) = core {
            return 3;
        }
    }
    2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Component {
    RgbDetector,
    IrDetector,
    Ian,
    Translator,
}

impl Component {
    pub fn file_stem(self) -> &'static str {
        match self {
            Component::RgbDetector => "rgb-detector",
            Component::IrDetector => "ir-detector",
            Component::Ian => "ian",
            Component::Translator => "translator",
        }
    }
}

/// Which part of a dataset a command works on, using the configured split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    #[default]
    All,
    Train,
    Test,
}

pub fn checkpoint_path(dir: &Path, component: Component) -> PathBuf {
    dir.join(format!("{}.json", component.file_stem()))
}

/// `<stem>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists()
        && fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some()
    {
        bail!(UsageError(format!("output directory {} is not empty", dir.display())));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub fn load_subset(root: &Path, subset: Subset, config: &PipelineConfig) -> Result<Vec<ImagePair>> {
    let pairs = load_dataset(root).with_context(|| format!("loading dataset {}", root.display()))?;
    if subset == Subset::All {
        return Ok(pairs);
    }
    let (train, test) = split_dataset(pairs, config.split.train_fraction, config.split.seed)?;
    Ok(if subset == Subset::Train { train } else { test })
}

/// Renders `n_scenes` paired frames into `out`.
pub fn cmd_simgen(config: &PipelineConfig, n_scenes: usize, out: &Path) -> Result<DatasetManifest> {
    if n_scenes == 0 {
        bail!(UsageError("--scenes must be at least 1".into()));
    }
    ensure_fresh_dir(out)?;
    let pairs = generate_paired_dataset(n_scenes, config.seed, &config.profile, &config.sim)?;
    let manifest = write_dataset(&pairs, out, config.seed)?;
    log::info!("wrote {} pairs to {}", manifest.entries.len(), out.display());
    Ok(manifest)
}

fn box_masks(source: &StyleSource) -> rgbir_core::Result<Vec<ObjectMask>> {
    let (w, h) = source.rgb.size();
    Ok(source.labels.iter().map(|b| ObjectMask::ellipse(b, w, h)).collect())
}

/// Replaces the IR side of every pair with a stylized frame. The translator
/// comes from `translator` if given, otherwise it is trained on the RGB
/// frames of `rgb_dataset` against the IR frames of `ir_style`.
pub fn cmd_stylize(
    config: &PipelineConfig,
    rgb_dataset: &Path,
    ir_style: Option<&Path>,
    translator: Option<&Path>,
    out: &Path,
) -> Result<StylizedDataset> {
    let pairs = load_dataset(rgb_dataset).with_context(|| format!("loading dataset {}", rgb_dataset.display()))?;
    let seed = read_manifest(rgb_dataset)?.seed;
    ensure_fresh_dir(out)?;
    if pairs.is_empty() {
        write_dataset(&[], out, seed)?;
        return Ok(StylizedDataset::default());
    }
    let model = match (translator, ir_style) {
        (Some(path), _) => load_translator(path)?,
        (None, Some(style)) => {
            let style_pairs = load_dataset(style).with_context(|| format!("loading IR style set {}", style.display()))?;
            let rgb: Vec<Image> = pairs.iter().map(|p| p.rgb.clone()).collect();
            let ir: Vec<Image> = style_pairs.iter().map(|p| p.ir.clone()).collect();
            train_translator(&rgb, &ir, &config.translator)?
        }
        (None, None) => bail!(UsageError("stylize needs --translator or --ir-style".into())),
    };
    let sources: Vec<StyleSource> = pairs.iter().map(StyleSource::from).collect();
    let mut enhance = config.stylize.enhance.clone();
    if config.stylize.masks == MaskSource::None {
        enhance.enabled = false;
    }
    let stylized = build_stylized_dataset(&sources, &model, box_masks, &config.profile, &enhance)?;
    for (id, e) in &stylized.skipped {
        log::warn!("skipped `{id}`: {e}");
    }
    write_dataset(&stylized.pairs, out, seed)?;
    Ok(stylized)
}

fn detector_modality(component: Component) -> Option<Modality> {
    match component {
        Component::RgbDetector => Some(Modality::Rgb),
        Component::IrDetector => Some(Modality::Ir),
        _ => None,
    }
}

pub struct TrainOptions<'a> {
    pub dataset: &'a Path,
    pub subset: Subset,
    pub checkpoints: &'a Path,
    /// Checkpoint to write; defaults to `<checkpoints>/<component>.json`.
    pub out: Option<&'a Path>,
    /// Continue from this checkpoint instead of starting fresh.
    pub resume: Option<&'a Path>,
    /// IR style set for the translator; defaults to the dataset's own IR frames.
    pub ir_style: Option<&'a Path>,
}

/// Trains one component and returns the checkpoint path.
pub fn cmd_train(config: &PipelineConfig, component: Component, opts: &TrainOptions) -> Result<PathBuf> {
    let out = opts
        .out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint_path(opts.checkpoints, component));
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let needs = |c: Component| checkpoint_path(opts.checkpoints, c);
    if component == Component::Ian {
        let missing: Vec<String> = [Component::RgbDetector, Component::IrDetector]
            .into_iter()
            .map(needs)
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            bail!(UsageError(format!(
                "IAN training needs trained detectors; missing checkpoints: {}",
                missing.join(", ")
            )));
        }
    }
    let pairs = load_subset(opts.dataset, opts.subset, config)?;
    if pairs.is_empty() {
        bail!(rgbir_core::Error::EmptyInput("training dataset"));
    }

    if let Some(m) = detector_modality(component) {
        let model = match opts.resume {
            Some(path) => {
                let mut model = load_detector(path)?;
                if model.modality != m {
                    bail!(UsageError(format!("{} holds a {} detector", path.display(), model.modality)));
                }
                let images: Vec<Image> = pairs.iter().map(|p| p.image(m).clone()).collect();
                let labels: Vec<_> = pairs.iter().map(|p| p.labels.clone()).collect();
                let epochs = config.detector(m).epochs;
                model.fit(&images, &labels, epochs)?;
                model
            }
            None => train_detector(&pairs, m, config.detector(m))?,
        };
        save_detector(&out, &model)?;
        write_loss_csv(&sibling(&out, "loss.csv"), &model.history)?;
        return Ok(out);
    }

    match component {
        Component::Ian => {
            let rgb = load_detector(&needs(Component::RgbDetector))?;
            let ir = load_detector(&needs(Component::IrDetector))?;
            let labels = make_selection_labels(&pairs, &rgb, &ir, image_f1)?;
            write_selection_labels(&sibling(&out, "labels.csv"), &labels)?;
            let model = match opts.resume {
                Some(path) => {
                    let mut model = load_ian(path)?;
                    let (inputs, targets) = training_set(&pairs, &labels, model.config.input_size)?;
                    let epochs = config.ian.epochs;
                    model.fit(&inputs, &targets, epochs)?;
                    model
                }
                None => train_ian(&pairs, &labels, &config.ian)?,
            };
            save_ian(&out, &model)?;
            write_loss_csv(&sibling(&out, "loss.csv"), &model.history)?;
        }
        Component::Translator => {
            let rgb: Vec<Image> = pairs.iter().map(|p| p.rgb.clone()).collect();
            let ir: Vec<Image> = match opts.ir_style {
                Some(style) => load_dataset(style)?.into_iter().map(|p| p.ir).collect(),
                None => pairs.iter().map(|p| p.ir.clone()).collect(),
            };
            let model = match opts.resume {
                Some(path) => {
                    let mut model = load_translator(path)?;
                    model.fit(&rgb, &ir, config.translator.epochs)?;
                    model
                }
                None => train_translator(&rgb, &ir, &config.translator)?,
            };
            save_translator(&out, &model)?;
            write_translator_csv(&sibling(&out, "loss.csv"), &model.history)?;
        }
        _ => unreachable!("detectors handled above"),
    }
    Ok(out)
}

/// Serves detections that were already computed.
struct Precomputed<'a>(&'a [Detection]);

impl Detect for Precomputed<'_> {
    fn detect(&self, _: &Image) -> rgbir_core::Result<Vec<Detection>> {
        Ok(self.0.to_vec())
    }
}

pub struct EvalFlags {
    pub subset: Subset,
    /// Overrides the configured splits when non-empty.
    pub splits: Vec<Split>,
    pub oracle_off: bool,
    /// IR column from the RGB detector on channel-replicated IR frames.
    pub grayscale_ir: bool,
}

/// All per-image outputs of one evaluation run.
pub struct EvalRun {
    pub report: EvalReport,
    pub rgb: BTreeMap<String, Vec<Detection>>,
    pub ir: BTreeMap<String, Vec<Detection>>,
    pub fusion: Vec<FusionResult>,
    pub oracle: Vec<FusionResult>,
}

/// Runs both detectors, the IAN-driven fusion and the oracle over `pairs`.
pub fn run_evaluation(
    pairs: &[ImagePair],
    rgb_model: &DetectorModel,
    ir_model: &DetectorModel,
    ian: &IanModel,
    options: &EvalOptions,
    grayscale_ir: bool,
) -> Result<EvalRun> {
    let mut rgb = BTreeMap::new();
    let mut ir = BTreeMap::new();
    let mut fusion = Vec::with_capacity(pairs.len());
    let mut oracle = Vec::with_capacity(pairs.len());
    for p in pairs {
        let r = rgb_model.detect(&p.rgb)?;
        let i = if grayscale_ir {
            detect_ir_as_grayscale(rgb_model, &p.ir)?
        } else {
            ir_model.detect(&p.ir)?
        };
        fusion.push(fuse(p, &Precomputed(&r), &Precomputed(&i), ian)?);
        oracle.push(oracle_fuse(&p.id, &r, &i, Some(&p.labels), image_f1)?);
        rgb.insert(p.id.clone(), r);
        ir.insert(p.id.clone(), i);
    }
    let gt: Vec<GroundTruth> = pairs.iter().map(GroundTruth::from).collect();
    let outputs = rgbir_core::eval::DetectorOutputs {
        rgb: rgb.clone(),
        ir: ir.clone(),
        fusion: Some(fusion.clone()),
        oracle: Some(oracle.clone()),
    };
    let report = evaluate(&gt, &outputs, options)?;
    Ok(EvalRun {
        report,
        rgb,
        ir,
        fusion,
        oracle,
    })
}

pub fn read_report(path: &Path) -> crate::Result<EvalReport> {
    read_json(path)
}

/// Evaluates trained checkpoints on a dataset and writes `report.txt`,
/// `report.json`, per-image detections and the fusion sidecars into `out`.
pub fn cmd_eval(config: &PipelineConfig, dataset: &Path, checkpoints: &Path, flags: &EvalFlags, out: &Path) -> Result<EvalReport> {
    let rgb_model = load_detector(&checkpoint_path(checkpoints, Component::RgbDetector))?;
    let ir_model = load_detector(&checkpoint_path(checkpoints, Component::IrDetector))?;
    let ian = load_ian(&checkpoint_path(checkpoints, Component::Ian))?;
    let pairs = load_subset(dataset, flags.subset, config)?;
    if pairs.is_empty() {
        bail!(rgbir_core::Error::EmptyInput("evaluation dataset"));
    }
    let options = EvalOptions {
        splits: if flags.splits.is_empty() {
            config.eval.splits.clone()
        } else {
            flags.splits.clone()
        },
        iou_threshold: config.eval.iou_threshold,
    };
    let mut run = run_evaluation(&pairs, &rgb_model, &ir_model, &ian, &options, flags.grayscale_ir)?;
    if flags.oracle_off {
        run.report.cells.retain(|c| c.detector != DetectorKind::Oracle);
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let dets = out.join("detections");
    write_detection_dir(&dets.join("rgb"), &run.rgb)?;
    write_detection_dir(&dets.join("ir"), &run.ir)?;
    let by_id =
        |r: &[FusionResult]| -> BTreeMap<String, Vec<Detection>> { r.iter().map(|f| (f.id.clone(), f.detections.clone())).collect() };
    write_detection_dir(&dets.join("fusion"), &by_id(&run.fusion))?;
    write_fusion_csv(&out.join("fusion.csv"), &run.fusion)?;
    if !flags.oracle_off {
        write_detection_dir(&dets.join("oracle"), &by_id(&run.oracle))?;
        write_fusion_csv(&out.join("oracle.csv"), &run.oracle)?;
    }
    write_text(&out.join("report.txt"), &render_report(&run.report))?;
    write_json(&out.join("report.json"), &run.report)?;
    Ok(run.report)
}

/// Draws `detections/<modality>/<id>.txt` onto each frame. A modality whose
/// directory is absent gets plain copies.
/// Draws every frame that has a detection file under `detections/<modality>/`.
pub fn cmd_overlay(dataset: &Path, detections: &Path, out: &Path) -> Result<usize> {
    let pairs = load_dataset(dataset)?;
    let mut written = 0;
    for m in [Modality::Rgb, Modality::Ir] {
        let src = detections.join(m.name());
        let dst = out.join(m.name());
        fs::create_dir_all(&dst).with_context(|| format!("creating {}", dst.display()))?;
        for p in &pairs {
            if !src.join(format!("{}.txt", p.id)).is_file() {
                continue;
            }
            let dets = read_detection_file(&src, &p.id, m)?;
            write_png(&dst.join(format!("{}.png", p.id)), &draw_detections(p.image(m), &dets, m))?;
            written += 1;
        }
    }
    Ok(written)
}

/// Times the fusion path over at most `limit` pairs and writes
/// `latency.json` into `out`.
pub fn cmd_bench(config: &PipelineConfig, checkpoints: &Path, dataset: &Path, limit: Option<usize>, out: &Path) -> Result<LatencyStats> {
    let rgb_model = load_detector(&checkpoint_path(checkpoints, Component::RgbDetector))?;
    let ir_model = load_detector(&checkpoint_path(checkpoints, Component::IrDetector))?;
    let ian = load_ian(&checkpoint_path(checkpoints, Component::Ian))?;
    let mut pairs = load_dataset(dataset)?;
    if let Some(n) = limit {
        pairs.truncate(n);
    }
    let stats = benchmark_latency(&rgb_model, &ir_model, &ian, &pairs, config.eval.warmup)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("latency.json"), &stats)?;
    Ok(stats)
}

pub fn format_latency(s: &LatencyStats) -> String {
    format!(
        "pairs {}  mean {:.2} ms  median {:.2} ms  p95 {:.2} ms  std {:.2} ms\nhardware: {}\n",
        s.samples, s.mean_ms, s.median_ms, s.p95_ms, s.std_ms, s.hardware
    )
}
