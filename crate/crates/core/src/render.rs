//! Redacted image rendering from ground-truth or predicted masks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Cursor;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Dataset, ImageRecord, Predictions};
use crate::error::{Error, Result};
use crate::mask::{rle_encode, BinaryMask, RleMask};
use crate::scaling::{
    render_redaction_mask, scale_series, select_thresholds, OperatingPoint, RedactionScale, ThresholdPlan,
    ThresholdSample, DEFAULT_MULTIPLIERS,
};
use crate::superpixel::{adjacency, segment, CacheKey, SlicParams, SuperpixelGraph, SuperpixelLabeling};
use crate::taxonomy::Attribute;
use crate::text::all_text_mask;

/// Sets masked pixels to black and leaves the rest untouched.
pub fn blackout(image: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    if image.dimensions() != mask.dims() {
        return Err(Error::DimensionMismatch {
            left: image.dimensions(),
            right: mask.dims(),
        });
    }
    let mut out = image.clone();
    for (px, &set) in out.pixels_mut().zip(mask.bits()) {
        if set {
            px.0 = [0, 0, 0];
        }
    }
    Ok(out)
}

/// PNG with fixed encoder settings, so equal images give equal bytes.
pub fn encode_png_rgb(image: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::NoFilter).write_image(
        image.as_raw(),
        image.width(),
        image.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(buf.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    GroundTruth,
    Prediction,
}

impl FromStr for MaskSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground_truth" | "gt" => Ok(MaskSource::GroundTruth),
            "prediction" | "pred" => Ok(MaskSource::Prediction),
            other => Err(Error::InvalidInput(format!("unknown mask source `{other}`"))),
        }
    }
}

/// A redaction level: a scale from S for ground truth, a multiplier from T
/// (or `all_text`) for predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Level {
    Value(f64),
    AllText,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Value(v) if v.is_infinite() => f.write_str("inf"),
            Level::Value(v) => write!(f, "{v}"),
            Level::AllText => f.write_str("all_text"),
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all_text" => Ok(Level::AllText),
            "inf" | "INF" | "infinity" => Ok(Level::Value(f64::INFINITY)),
            other => match other.parse::<f64>() {
                Ok(v) if v >= 0.0 => Ok(Level::Value(v)),
                _ => Err(Error::InvalidScale(other.to_string())),
            },
        }
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Level::Value(v) if v.is_finite() => serializer.serialize_f64(*v),
            other => serializer.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) if v >= 0.0 => Ok(Level::Value(v)),
            Raw::Number(v) => Err(serde::de::Error::custom(format!("invalid scale {v}"))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub attribute: Attribute,
    pub scale: Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedactionRequest {
    pub image_id: String,
    #[serde(default)]
    pub selections: Vec<Selection>,
    pub source: MaskSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedactionOutput {
    pub image: RgbImage,
    pub mask: BinaryMask,
}

impl RedactionOutput {
    pub fn png(&self) -> Result<Vec<u8>> {
        encode_png_rgb(&self.image)
    }

    pub fn mask_rle(&self) -> RleMask {
        rle_encode(&self.mask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedactorConfig {
    pub scales: Vec<RedactionScale>,
    pub multipliers: Vec<f64>,
    pub slic: SlicParams,
    /// Directory for cached superpixel labelings, if any.
    pub cache_dir: Option<PathBuf>,
}

impl Default for RedactorConfig {
    fn default() -> Self {
        RedactorConfig {
            scales: RedactionScale::DEFAULT_SET.to_vec(),
            multipliers: DEFAULT_MULTIPLIERS.to_vec(),
            slic: SlicParams::default(),
            cache_dir: None,
        }
    }
}

type Substrate = Arc<(SuperpixelLabeling, SuperpixelGraph)>;

/// Dataset, predictions and derived state needed to answer redaction
/// requests. Safe to share between threads.
pub struct Redactor {
    dataset: Dataset,
    predictions: Predictions,
    plan: ThresholdPlan,
    config: RedactorConfig,
    substrates: Mutex<HashMap<String, Substrate>>,
}

impl fmt::Debug for Redactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Redactor")
            .field("images", &self.dataset.images().len())
            .field("predictions", &self.predictions.len())
            .field("config", &self.config)
            .finish()
    }
}

/// Thresholds per attribute from every image that has both a score mask and
/// ground truth for it. Attributes without ground truth get no entry.
pub fn plan_from_dataset<'a>(
    images: impl IntoIterator<Item = &'a ImageRecord>,
    predictions: &Predictions,
    multipliers: &[f64],
) -> Result<ThresholdPlan> {
    let mut gts = Vec::new();
    for img in images {
        for attribute in Attribute::ALL {
            if let Some(scores) = predictions.get(&(img.id.clone(), attribute)) {
                gts.push((attribute, scores, img.attribute_mask(attribute)?));
            }
        }
    }
    let mut totals: BTreeMap<Attribute, usize> = BTreeMap::new();
    for (a, _, gt) in &gts {
        *totals.entry(*a).or_insert(0) += gt.area();
    }
    let samples: Vec<ThresholdSample<'_>> = gts
        .iter()
        .filter(|(a, _, _)| totals[a] > 0)
        .map(|(attribute, scores, gt)| ThresholdSample {
            attribute: *attribute,
            scores,
            gt,
        })
        .collect();
    select_thresholds(&samples, multipliers)
}

impl Redactor {
    pub fn new(dataset: Dataset, predictions: Predictions, config: RedactorConfig) -> Result<Self> {
        let plan = plan_from_dataset(dataset.images(), &predictions, &config.multipliers)?;
        Ok(Redactor {
            dataset,
            predictions,
            plan,
            config,
            substrates: Mutex::new(HashMap::new()),
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn predictions(&self) -> &Predictions {
        &self.predictions
    }

    pub fn plan(&self) -> &ThresholdPlan {
        &self.plan
    }

    pub fn config(&self) -> &RedactorConfig {
        &self.config
    }

    fn record(&self, image_id: &str) -> Result<&ImageRecord> {
        self.dataset
            .image(image_id)
            .ok_or_else(|| Error::NotFound(format!("image `{image_id}`")))
    }

    pub fn load_image(&self, image_id: &str) -> Result<RgbImage> {
        let record = self.record(image_id)?;
        let path = self.dataset.image_path(record);
        let image = image::open(&path)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(&path, io),
                other => Error::Image(other),
            })?
            .to_rgb8();
        if image.dimensions() != (record.width, record.height) {
            return Err(Error::DimensionMismatch {
                left: (record.width, record.height),
                right: image.dimensions(),
            });
        }
        Ok(image)
    }

    /// Superpixels of an image, computed once and optionally cached on disk.
    /// The target count is capped at the pixel count for tiny images.
    pub fn substrate(&self, image_id: &str) -> Result<Substrate> {
        if let Some(s) = self.substrates.lock().expect("lock").get(image_id) {
            return Ok(Arc::clone(s));
        }
        let image = self.load_image(image_id)?;
        let pixels = image.width() as usize * image.height() as usize;
        let params = SlicParams {
            target_count: self.config.slic.target_count.min(pixels),
            ..self.config.slic.clone()
        };
        let key = CacheKey::new(&image, &params);
        let cache_path = self
            .config
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}.png", &key.image_sha256[..16])));
        let cached = match &cache_path {
            Some(p) => SuperpixelLabeling::load_cache(p, &key)?,
            None => None,
        };
        let labeling = match cached {
            Some(l) => l,
            None => {
                let l = segment(&image, &params)?;
                if let Some(p) = &cache_path {
                    if let Some(dir) = p.parent() {
                        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    }
                    l.save_cache(p, &key)?;
                }
                l
            }
        };
        let graph = adjacency(&labeling);
        let substrate = Arc::new((labeling, graph));
        self.substrates
            .lock()
            .expect("lock")
            .insert(image_id.to_string(), Arc::clone(&substrate));
        Ok(substrate)
    }

    fn check_level(&self, attribute: Attribute, source: MaskSource, level: Level) -> Result<()> {
        let ok = match (source, level) {
            (MaskSource::GroundTruth, Level::Value(v)) => self.config.scales.iter().any(|s| s.value() == v),
            (MaskSource::GroundTruth, Level::AllText) => false,
            (MaskSource::Prediction, Level::Value(v)) => self.config.multipliers.contains(&v),
            (MaskSource::Prediction, Level::AllText) => attribute.is_textual(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScale(format!("{level} for {attribute} ({source:?})")))
        }
    }

    /// The mask a selection redacts, after the bounding-box rule for
    /// attributes that are blacked out by box.
    pub fn selection_mask(
        &self,
        image_id: &str,
        attribute: Attribute,
        level: Level,
        source: MaskSource,
    ) -> Result<BinaryMask> {
        self.check_level(attribute, source, level)?;
        let record = self.record(image_id)?;
        let (w, h) = (record.width, record.height);
        let raw = match (source, level) {
            (MaskSource::GroundTruth, Level::Value(v)) => {
                let gt = record.attribute_mask(attribute)?;
                let scale = RedactionScale::new(v)?;
                if scale.is_infinite() {
                    BinaryMask::full(w, h)
                } else if gt.is_empty() || v == 0.0 {
                    BinaryMask::empty(w, h)
                } else if v == 1.0 {
                    gt
                } else {
                    let substrate = self.substrate(image_id)?;
                    let (labeling, graph) = &*substrate;
                    scale_series(&gt, &[scale], labeling, graph)?.remove(0).1
                }
            }
            (MaskSource::Prediction, Level::AllText) => match &record.words {
                Some(words) => all_text_mask(words, w, h)?,
                None => BinaryMask::empty(w, h),
            },
            (MaskSource::Prediction, Level::Value(t)) => {
                let scores = self
                    .predictions
                    .get(&(image_id.to_string(), attribute))
                    .ok_or_else(|| Error::MissingPrediction {
                        image_id: image_id.to_string(),
                        attribute,
                    })?;
                match self.plan.lookup(attribute, t) {
                    Some(OperatingPoint::Score { level, .. }) => scores.binarize_level(*level),
                    _ => {
                        return Err(Error::InvalidScale(format!(
                            "no threshold for {attribute} at {t}: attribute has no ground truth to calibrate against"
                        )))
                    }
                }
            }
            (MaskSource::GroundTruth, Level::AllText) => unreachable!("rejected by check_level"),
        };
        Ok(render_redaction_mask(&raw, attribute))
    }

    pub fn redact(&self, request: &RedactionRequest) -> Result<RedactionOutput> {
        let record = self.record(&request.image_id)?;
        let mut seen = BTreeSet::new();
        for s in &request.selections {
            if !seen.insert(s.attribute) {
                return Err(Error::InvalidInput(format!(
                    "attribute `{}` selected twice",
                    s.attribute
                )));
            }
        }
        let image = self.load_image(&request.image_id)?;
        let mut mask = BinaryMask::empty(record.width, record.height);
        for s in &request.selections {
            mask.union_with(&self.selection_mask(&request.image_id, s.attribute, s.scale, request.source)?)?;
        }
        let image = blackout(&image, &mask)?;
        Ok(RedactionOutput { image, mask })
    }
}
