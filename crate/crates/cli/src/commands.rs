use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use redact_core::dataset::{
    load_dataset, score_mask_file_name, validate_dataset, Dataset, ImageRecord, PredictionManifest, Predictions, Split,
    WordSequence,
};
use redact_core::eval::{curves_to_csv, evaluate, threshold_grid, EvalConfig, MIN_INSTANCE_AREA};
use redact_core::mask::{rle_encode, BinaryMask};
use redact_core::render::{Level, MaskSource, RedactionRequest, Redactor, RedactorConfig, Selection};
use redact_core::scaling::RedactionScale;
use redact_core::study::{
    aggregate_by_size, aggregate_conditions, buckets_to_csv, curve_to_csv, load_responses, pu_curve, relative_auc,
    responses_to_csv, simulate_study, JudgeParams, PuCurve,
};
use redact_core::superpixel::{segment, CacheKey, SlicParams};
use redact_core::taxonomy::Attribute;
use redact_core::text::{
    ingest_word_labels, proxy_gt, rules_label, words_to_score_masks, ClassMapping, Gazetteer, GazetteerKind,
    WordLabeling,
};
use serde_json::{json, Value};

use crate::server::{router, ServiceState};

#[derive(Parser, Debug)]
#[command(
    name = "redact",
    version,
    about = "Redact private regions of images and evaluate redactions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check an annotation file against the taxonomy and geometry rules
    Validate(ValidateArgs),
    /// Label OCR words with the gazetteer rules and write score masks
    Rules(RulesArgs),
    /// Convert external per-word predictions into score masks
    WordMasks(WordMasksArgs),
    /// Assign OCR words the ground-truth attribute they overlap most
    ProxyGt(ProxyGtArgs),
    /// Compute SLIC0 superpixels of an image
    Slic(SlicArgs),
    /// Write the ground-truth mask of an attribute at one redaction scale
    Scale(ScaleArgs),
    /// Black out selected attributes of an image
    Redact(RedactArgs),
    /// Pixel-level precision-recall evaluation of score masks
    EvalSeg(EvalSegArgs),
    /// Privacy-utility curve and AUC from study responses
    PuCurve(PuCurveArgs),
    /// Generate study responses with the synthetic judge
    SimulateStudy(SimulateArgs),
    /// Serve the HTTP API
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Annotation document (COCO-like JSON)
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory of `<image_id>.json` OCR files
    #[arg(long)]
    pub ocr_dir: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        load_dataset(&self.annotations, self.ocr_dir.as_deref())
            .with_context(|| format!("loading {}", self.annotations.display()))
    }
}

#[derive(Args, Debug, Clone)]
pub struct SlicOptions {
    /// Superpixel target count
    #[arg(long, default_value_t = 4000)]
    pub target: usize,
    /// SLIC0 iterations
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Longest image side before clustering on a downscaled copy (0 disables)
    #[arg(long, default_value_t = 512)]
    pub max_side: u32,
    /// Directory for cached superpixel labelings
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

impl SlicOptions {
    fn params(&self) -> SlicParams {
        SlicParams {
            target_count: self.target,
            iterations: self.iterations,
            max_side: (self.max_side > 0).then_some(self.max_side),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct RedactorArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Prediction manifest (JSON) or directory of `<image_id>__<attribute>.png` files
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Redaction scales for ground truth, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2,4,inf")]
    pub scales: Vec<String>,
    /// Threshold multipliers for predictions, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4,8")]
    pub multipliers: Vec<f64>,
    #[command(flatten)]
    pub slic: SlicOptions,
}

impl RedactorArgs {
    fn build(&self) -> Result<Redactor> {
        let dataset = self.data.load()?;
        let predictions = match &self.predictions {
            Some(p) => load_predictions(p)?,
            None => Predictions::new(),
        };
        let scales = self
            .scales
            .iter()
            .map(|s| s.parse::<RedactionScale>())
            .collect::<redact_core::Result<Vec<_>>>()?;
        let config = RedactorConfig {
            scales,
            multipliers: self.multipliers.clone(),
            slic: self.slic.params(),
            cache_dir: self.slic.cache_dir.clone(),
        };
        Ok(Redactor::new(dataset, predictions, config)?)
    }
}

fn load_predictions(path: &Path) -> Result<Predictions> {
    let manifest = if path.is_dir() {
        PredictionManifest::from_dir(path)?
    } else {
        PredictionManifest::load(path)?
    };
    manifest
        .load_all()
        .with_context(|| format!("loading predictions from {}", path.display()))
}

fn selected_images(dataset: &Dataset, split: Option<Split>) -> Vec<&ImageRecord> {
    dataset
        .images()
        .iter()
        .filter(|i| split.is_none_or(|s| i.split == s))
        .collect()
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_text(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json value");
    s.push('\n');
    s
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn validate(args: &ValidateArgs) -> Result<()> {
    let dataset = args.data.load()?;
    let report = validate_dataset(&dataset);
    let value = json!({
        "images": dataset.images().len(),
        "instances": dataset.instance_counts(),
        "violations": report.violations,
    });
    write_text(args.out.as_deref(), &json_text(&value))?;
    if !report.is_empty() {
        bail!("{} violation(s)", report.violations.len());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct GazetteerArgs {
    /// Name list, one entry per line (default: bundled list)
    #[arg(long)]
    pub names: Option<PathBuf>,
    /// Place list, one entry per line (default: bundled list)
    #[arg(long)]
    pub places: Option<PathBuf>,
}

impl GazetteerArgs {
    fn load(&self) -> Result<(Gazetteer, Gazetteer)> {
        let names = match &self.names {
            Some(p) => Gazetteer::load(GazetteerKind::Names, p)?,
            None => Gazetteer::bundled_names(),
        };
        let places = match &self.places {
            Some(p) => Gazetteer::load(GazetteerKind::Places, p)?,
            None => Gazetteer::bundled_places(),
        };
        Ok((names, places))
    }
}

#[derive(Args, Debug)]
pub struct RulesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub gazetteers: GazetteerArgs,
    /// Only images of this split
    #[arg(long)]
    pub split: Option<Split>,
    /// Output directory for score masks and `manifest.json`
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes the textual score masks of every image with OCR words, labeled by
/// `label`, plus a manifest. Images for which `label` returns `None` are
/// skipped.
fn write_word_masks(
    dataset: &Dataset,
    split: Option<Split>,
    out: &Path,
    mut label: impl FnMut(&ImageRecord, &WordSequence) -> Result<Option<WordLabeling>>,
) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut entries = Vec::new();
    for img in selected_images(dataset, split) {
        let Some(words) = &img.words else { continue };
        let Some(labeling) = label(img, words)? else { continue };
        for (attribute, mask) in words_to_score_masks(&labeling, words, img.width, img.height)? {
            let name = score_mask_file_name(&img.id, attribute);
            mask.save_png(&out.join(&name))?;
            entries.push(json!({"image_id": img.id, "attribute": attribute, "path": name}));
        }
    }
    write_text(
        Some(&out.join("manifest.json")),
        &json_text(&json!({"predictions": entries})),
    )?;
    eprintln!("wrote {} score masks to {}", entries.len(), out.display());
    Ok(())
}

fn rules(args: &RulesArgs) -> Result<()> {
    let dataset = args.data.load()?;
    let (names, places) = args.gazetteers.load()?;
    write_word_masks(&dataset, args.split, &args.out, |_, words| {
        Ok(Some(rules_label(words, &names, &places)))
    })
}

#[derive(Args, Debug)]
pub struct WordMasksArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory of `<image_id>.csv` files with rows `order_index,class,score`
    #[arg(long)]
    pub labels: PathBuf,
    /// Class-to-attribute CSV `class,attribute` (default: bundled NER mapping)
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Fail on classes missing from the mapping instead of treating them as safe
    #[arg(long)]
    pub strict: bool,
    /// Only images of this split
    #[arg(long)]
    pub split: Option<Split>,
    /// Output directory for score masks and `manifest.json`
    #[arg(long)]
    pub out: PathBuf,
}

fn word_masks(args: &WordMasksArgs) -> Result<()> {
    let dataset = args.data.load()?;
    let mapping = match &args.mapping {
        Some(p) => ClassMapping::load(p)?,
        None => ClassMapping::ner_default(),
    };
    write_word_masks(&dataset, args.split, &args.out, |img, words| {
        let path = args.labels.join(format!("{}.csv", img.id));
        if !path.is_file() {
            return Ok(None);
        }
        Ok(Some(ingest_word_labels(&path, words, &mapping, args.strict)?))
    })
}

#[derive(Args, Debug)]
pub struct ProxyGtArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory for labeled OCR files
    #[arg(long)]
    pub out: PathBuf,
}

fn proxy_gt_cmd(args: &ProxyGtArgs) -> Result<()> {
    let dataset = args.data.load()?;
    fs::create_dir_all(&args.out)?;
    let mut n = 0;
    for img in dataset.images() {
        let Some(words) = &img.words else { continue };
        let gt: BTreeMap<Attribute, BinaryMask> = img
            .attributes()
            .into_iter()
            .filter(|a| a.is_textual())
            .map(|a| Ok((a, img.attribute_mask(a)?)))
            .collect::<redact_core::Result<_>>()?;
        let labeled = proxy_gt(words, &gt)?;
        write_text(
            Some(&args.out.join(format!("{}.json", img.id))),
            &json_text(&labeled.to_json()),
        )?;
        n += 1;
    }
    eprintln!("labeled {n} word sequences");
    Ok(())
}

#[derive(Args, Debug)]
pub struct SlicArgs {
    /// Input image
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub slic: SlicOptions,
    /// Output 16-bit label PNG; a JSON sidecar is written next to it
    #[arg(long)]
    pub out: PathBuf,
}

fn slic(args: &SlicArgs) -> Result<()> {
    let image = image::open(&args.image)
        .with_context(|| format!("reading {}", args.image.display()))?
        .to_rgb8();
    let params = args.slic.params();
    let labeling = segment(&image, &params)?;
    labeling.save_cache(&args.out, &CacheKey::new(&image, &params))?;
    println!(
        "{}",
        json!({"superpixels": labeling.count(), "connected": labeling.is_connected()})
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ScaleArgs {
    #[command(flatten)]
    pub redactor: RedactorArgs,
    #[arg(long)]
    pub image_id: String,
    #[arg(long)]
    pub attribute: Attribute,
    /// Redaction scale (number or `inf`)
    #[arg(long = "s", default_value = "1")]
    pub scale: Level,
    /// Write the RLE JSON here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn scale(args: &ScaleArgs) -> Result<()> {
    let redactor = args.redactor.build()?;
    let mask = redactor.selection_mask(&args.image_id, args.attribute, args.scale, MaskSource::GroundTruth)?;
    let value = json!({
        "image_id": args.image_id, "attribute": args.attribute, "scale": args.scale,
        "area": mask.area(), "rle": rle_encode(&mask),
    });
    write_text(args.out.as_deref(), &json_text(&value))
}

#[derive(Args, Debug)]
pub struct RedactArgs {
    #[command(flatten)]
    pub redactor: RedactorArgs,
    /// JSON redaction request; overrides --image-id/--select/--source
    #[arg(long)]
    pub request: Option<PathBuf>,
    #[arg(long, required_unless_present = "request")]
    pub image_id: Option<String>,
    /// `attribute=scale`, repeatable
    #[arg(long = "select")]
    pub selections: Vec<String>,
    #[arg(long, default_value = "ground_truth")]
    pub source: MaskSource,
    /// Output PNG
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the applied mask as RLE JSON
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
}

fn parse_selection(s: &str) -> Result<Selection> {
    let (attr, level) = s
        .split_once('=')
        .with_context(|| format!("selection `{s}` is not attribute=scale"))?;
    Ok(Selection {
        attribute: attr.parse()?,
        scale: level.parse()?,
    })
}

pub fn request_from_args(args: &RedactArgs) -> Result<RedactionRequest> {
    if let Some(path) = &args.request {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    Ok(RedactionRequest {
        image_id: args.image_id.clone().expect("required by clap"),
        selections: args
            .selections
            .iter()
            .map(|s| parse_selection(s))
            .collect::<Result<_>>()?,
        source: args.source,
    })
}

fn redact(args: &RedactArgs) -> Result<()> {
    let request = request_from_args(args)?;
    let redactor = args.redactor.build()?;
    let out = redactor.redact(&request)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&args.out, out.png()?).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.mask_out {
        write_text(
            Some(path),
            &json_text(&json!({"area": out.mask.area(), "rle": out.mask_rle()})),
        )?;
    }
    eprintln!("redacted {} pixels of {}", out.mask.area(), request.image_id);
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalSegArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Prediction manifest (JSON) or directory of score-mask PNGs
    #[arg(long)]
    pub predictions: PathBuf,
    /// Only images of this split
    #[arg(long)]
    pub split: Option<Split>,
    /// Number of thresholds evenly spaced over [0, 1]
    #[arg(long, default_value_t = 50)]
    pub thresholds: usize,
    /// Instances with fewer pixels are ignored
    #[arg(long, default_value_t = MIN_INSTANCE_AREA)]
    pub min_area: usize,
    /// Count ignored instances' pixels as background instead of don't-care
    #[arg(long)]
    pub ignored_as_background: bool,
    /// Fail on a missing score mask instead of treating it as all zeros
    #[arg(long)]
    pub strict: bool,
    /// Report JSON (AP in percent); stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Raw precision-recall curves as CSV
    #[arg(long)]
    pub curves_csv: Option<PathBuf>,
}

pub fn eval_config(args: &EvalSegArgs) -> EvalConfig {
    EvalConfig {
        thresholds: threshold_grid(args.thresholds),
        min_instance_area: args.min_area,
        count_ignored_as_background: args.ignored_as_background,
        lenient_missing: !args.strict,
    }
}

fn eval_seg(args: &EvalSegArgs) -> Result<()> {
    let dataset = args.data.load()?;
    let predictions = load_predictions(&args.predictions)?;
    let evaluation = evaluate(selected_images(&dataset, args.split), &predictions, &eval_config(args))?;
    write_text(args.out.as_deref(), &json_text(&evaluation.report.to_percent_json()))?;
    if let Some(path) = &args.curves_csv {
        write_text(Some(path), &curves_to_csv(&evaluation.curves))?;
    }
    eprint!("{}", evaluation.report.to_table());
    Ok(())
}

#[derive(Args, Debug)]
pub struct PuCurveArgs {
    /// Response CSV
    #[arg(long)]
    pub responses: PathBuf,
    /// Responses for the ground-truth baseline, for the relative AUC
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Curve CSV; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON with AUC
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Annotation file used to bucket tasks by ground-truth size
    #[arg(long, requires = "sizes_out")]
    pub sizes_annotations: Option<PathBuf>,
    /// Per-size-bucket CSV
    #[arg(long)]
    pub sizes_out: Option<PathBuf>,
}

pub fn curve_summary(curve: &PuCurve, baseline: Option<&PuCurve>) -> Result<Value> {
    let mut v = json!({"auc": curve.auc, "points": curve.points, "vertices": curve.vertices});
    if let Some(b) = baseline {
        v["baseline_auc"] = json!(b.auc);
        v["relative_auc"] = json!(relative_auc(curve, b)?);
    }
    Ok(v)
}

fn pu_curve_cmd(args: &PuCurveArgs) -> Result<()> {
    let responses = load_responses(&args.responses)?;
    let curve = pu_curve(&aggregate_conditions(&responses)?)?;
    let baseline = match &args.baseline {
        Some(p) => Some(pu_curve(&aggregate_conditions(&load_responses(p)?)?)?),
        None => None,
    };
    write_text(args.out.as_deref(), &curve_to_csv(&curve))?;
    let summary = curve_summary(&curve, baseline.as_ref())?;
    if let Some(path) = &args.summary {
        write_text(Some(path), &json_text(&summary))?;
    }
    if let (Some(ann), Some(out)) = (&args.sizes_annotations, &args.sizes_out) {
        let dataset = load_dataset(ann, None)?;
        let mut fractions = BTreeMap::new();
        for img in dataset.images() {
            for a in img.attributes() {
                fractions.insert((img.id.clone(), a), img.attribute_mask(a)?.area_fraction());
            }
        }
        write_text(Some(out), &buckets_to_csv(&aggregate_by_size(&responses, &fractions)?))?;
    }
    eprintln!("auc {:.4}", curve.auc);
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub redactor: RedactorArgs,
    #[arg(long, default_value = "ground_truth")]
    pub source: MaskSource,
    /// Only images of this split
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long, default_value_t = 5)]
    pub workers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of ground truth that must be redacted to hide the attribute
    #[arg(long, default_value_t = 1.0)]
    pub coverage_threshold: f64,
    /// Slope k of the utility response 1 - clamp(k * redacted fraction)
    #[arg(long, default_value_t = 1.0)]
    pub utility_slope: f64,
    /// Response CSV; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let redactor = args.redactor.build()?;
    let ids: Vec<String> = selected_images(redactor.dataset(), args.split)
        .iter()
        .map(|i| i.id.clone())
        .collect();
    let params = JudgeParams {
        workers: args.workers,
        seed: args.seed,
        coverage_threshold: args.coverage_threshold,
        utility_slope: args.utility_slope,
        ..JudgeParams::default()
    };
    let responses = simulate_study(&redactor, &ids, args.source, &params)?;
    write_text(args.out.as_deref(), &responses_to_csv(&responses))
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub redactor: RedactorArgs,
    /// Response CSV served at /reports/pu
    #[arg(long)]
    pub responses: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

/// Service state with the evaluation report computed when predictions are
/// loaded and the privacy-utility report when responses are given.
pub fn service_state(redactor: Redactor, responses: Option<&Path>) -> Result<ServiceState> {
    let eval_report = if redactor.predictions().is_empty() {
        None
    } else {
        let evaluation = evaluate(
            redactor.dataset().images(),
            redactor.predictions(),
            &EvalConfig::default(),
        )?;
        Some(evaluation.report.to_percent_json())
    };
    let pu_report = match responses {
        Some(p) => {
            let curve = pu_curve(&aggregate_conditions(&load_responses(p)?)?)?;
            Some(curve_summary(&curve, None)?)
        }
        None => None,
    };
    Ok(ServiceState {
        redactor,
        eval_report,
        pu_report,
    })
}

fn serve(args: &ServeArgs) -> Result<()> {
    let state = service_state(args.redactor.build()?, args.responses.as_deref())?;
    let app = router(Arc::new(state));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Rules(a) => rules(a),
        Command::WordMasks(a) => word_masks(a),
        Command::ProxyGt(a) => proxy_gt_cmd(a),
        Command::Slic(a) => slic(a),
        Command::Scale(a) => scale(a),
        Command::Redact(a) => redact(a),
        Command::EvalSeg(a) => eval_seg(a),
        Command::PuCurve(a) => pu_curve_cmd(a),
        Command::SimulateStudy(a) => simulate(a),
        Command::Serve(a) => serve(a),
    }
}
