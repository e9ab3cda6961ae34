//! Annotation, OCR and prediction interchange files.
//!
//! The annotation document is COCO-like: top-level `images`, `annotations`
//! and `attributes` arrays, polygons as flat coordinate arrays. The full
//! layout is in `docs/formats.md`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polygon;
use crate::mask::{rasterize, rle_decode, BinaryMask, RleMask, ScoreMask};
use crate::taxonomy::{self, Attribute, Category};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceGeometry {
    Polygons(Vec<Polygon>),
    Rle(RleMask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonInstance {
    pub instance_id: u64,
    pub attribute: Attribute,
    pub geometry: InstanceGeometry,
}

impl PolygonInstance {
    pub fn rasterize(&self, width: u32, height: u32) -> Result<BinaryMask> {
        match &self.geometry {
            InstanceGeometry::Polygons(polys) => rasterize(polys, width, height),
            InstanceGeometry::Rle(rle) => {
                if (rle.width, rle.height) != (width, height) {
                    return Err(Error::DimensionMismatch {
                        left: (rle.width, rle.height),
                        right: (width, height),
                    });
                }
                rle_decode(rle)
            }
        }
    }
}

/// Word-level label: one of the eight textual attributes, or safe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WordLabel {
    Safe,
    Attribute(Attribute),
}

impl WordLabel {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "safe" {
            return Ok(WordLabel::Safe);
        }
        let attr = Attribute::from_key(s)?;
        if !attr.is_textual() {
            return Err(Error::InvalidInput(format!(
                "word label `{s}` is not a textual attribute"
            )));
        }
        Ok(WordLabel::Attribute(attr))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WordLabel::Safe => "safe",
            WordLabel::Attribute(a) => a.key(),
        }
    }
}

impl Serialize for WordLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for WordLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        WordLabel::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub text: String,
    /// Four corners in OCR order.
    pub quad: Polygon,
    pub order_index: usize,
    pub label: Option<WordLabel>,
}

/// OCR words of one image in reading order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordSequence {
    pub words: Vec<Word>,
    /// Page/block/paragraph levels of the OCR file, kept as-is.
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl WordSequence {
    pub fn from_words(words: Vec<Word>) -> Self {
        WordSequence {
            words,
            extra: Default::default(),
        }
    }

    /// Words from `(text, x, y, width, height)` boxes, indexed in order.
    pub fn from_boxes<'a>(boxes: impl IntoIterator<Item = (&'a str, f64, f64, f64, f64)>) -> Self {
        let words = boxes
            .into_iter()
            .enumerate()
            .map(|(i, (text, x, y, w, h))| Word {
                text: text.to_string(),
                quad: Polygon::rect(x, y, w, h),
                order_index: i,
                label: None,
            })
            .collect();
        WordSequence::from_words(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: RawOcrFile = parse_json_file(path)?;
        let mut words = Vec::with_capacity(raw.words.len());
        for (i, w) in raw.words.into_iter().enumerate() {
            if w.r#box.len() != 8 {
                return Err(Error::malformed(
                    path,
                    format!("words[{i}].box has {} numbers, expected 8", w.r#box.len()),
                ));
            }
            words.push(Word {
                text: w.text,
                quad: Polygon::from_flat(&w.r#box).expect("length checked"),
                order_index: w.order_index,
                label: w.label,
            });
        }
        words.sort_by_key(|w| w.order_index);
        if let Some(pair) = words.windows(2).find(|p| p[0].order_index == p[1].order_index) {
            return Err(Error::malformed(
                path,
                format!("duplicate order_index {}", pair[0].order_index),
            ));
        }
        Ok(WordSequence {
            words,
            extra: raw.extra,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let words: Vec<RawWord> = self
            .words
            .iter()
            .map(|w| RawWord {
                text: w.text.clone(),
                r#box: w.quad.to_flat(),
                order_index: w.order_index,
                label: w.label,
            })
            .collect();
        let mut map = self.extra.clone();
        map.insert("words".into(), serde_json::to_value(words).expect("plain data"));
        serde_json::Value::Object(map)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub split: Split,
    pub instances: Vec<PolygonInstance>,
    pub words: Option<WordSequence>,
}

impl ImageRecord {
    pub fn instances_of(&self, attribute: Attribute) -> impl Iterator<Item = &PolygonInstance> {
        self.instances.iter().filter(move |i| i.attribute == attribute)
    }

    pub fn attributes(&self) -> Vec<Attribute> {
        let mut attrs: Vec<_> = self.instances.iter().map(|i| i.attribute).collect();
        attrs.sort();
        attrs.dedup();
        attrs
    }

    pub fn instance_masks(&self, attribute: Attribute) -> Result<Vec<BinaryMask>> {
        self.instances_of(attribute)
            .map(|i| i.rasterize(self.width, self.height))
            .collect()
    }

    /// Union of all instances of `attribute`; empty when there are none.
    pub fn attribute_mask(&self, attribute: Attribute) -> Result<BinaryMask> {
        let mut mask = BinaryMask::empty(self.width, self.height);
        for inst in self.instances_of(attribute) {
            mask.union_with(&inst.rasterize(self.width, self.height)?)?;
        }
        Ok(mask)
    }

    /// Union over every annotated attribute.
    pub fn all_attributes_mask(&self) -> Result<BinaryMask> {
        let mut mask = BinaryMask::empty(self.width, self.height);
        for inst in &self.instances {
            mask.union_with(&inst.rasterize(self.width, self.height)?)?;
        }
        Ok(mask)
    }
}

/// Immutable collection of annotated images, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    images: Vec<ImageRecord>,
    by_id: HashMap<String, usize>,
    declared_attributes: Vec<AttributeEntry>,
    root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntry {
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Dataset {
    /// Builds a dataset from records. Later duplicates of an id are kept in
    /// `images()` but unreachable by id; `validate` reports them.
    pub fn from_images(images: Vec<ImageRecord>) -> Self {
        let mut by_id = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            by_id.entry(img.id.clone()).or_insert(i);
        }
        Dataset {
            images,
            by_id,
            declared_attributes: Vec::new(),
            root: None,
        }
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.by_id.get(id).map(|&i| &self.images[i])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |i| i.split == split)
    }

    pub fn declared_attributes(&self) -> &[AttributeEntry] {
        &self.declared_attributes
    }

    /// Directory holding the annotation file; image `file_name`s resolve against it.
    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        match &self.root {
            Some(root) => root.join(&record.file_name),
            None => PathBuf::from(&record.file_name),
        }
    }

    pub fn instance_counts(&self) -> BTreeMap<Attribute, usize> {
        let mut counts = BTreeMap::new();
        for inst in self.images.iter().flat_map(|i| &i.instances) {
            *counts.entry(inst.attribute).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Deserialize)]
struct RawDocument {
    #[serde(default)]
    attributes: Vec<AttributeEntry>,
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawImage {
    id: String,
    #[serde(default)]
    file_name: Option<String>,
    width: u32,
    height: u32,
    split: Split,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: String,
    attribute: String,
    #[serde(default)]
    segmentation: Option<RawSegmentation>,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSegmentation {
    Polygons(Vec<Polygon>),
    Rle(RleMask),
}

#[derive(Deserialize)]
struct RawOcrFile {
    #[serde(default)]
    words: Vec<RawWord>,
    #[serde(flatten)]
    extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct RawWord {
    text: String,
    r#box: Vec<f64>,
    order_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<WordLabel>,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        Error::malformed(
            path,
            format!(
                "{inner} (field `{field}`, line {}, column {})",
                inner.line(),
                inner.column()
            ),
        )
    })
}

pub(crate) fn parse_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(path, &read_file(path)?)
}

/// Loads an annotation document and, when `ocr_dir` is given, the
/// `<image_id>.json` OCR file of each image that has one.
pub fn load_dataset(annotation_file: &Path, ocr_dir: Option<&Path>) -> Result<Dataset> {
    taxonomy::assert_partition();
    let text = read_file(annotation_file)?;
    let mut dataset = parse_dataset(annotation_file, &text)?;
    dataset.root = annotation_file.parent().map(Path::to_path_buf);
    if let Some(dir) = ocr_dir {
        for img in &mut dataset.images {
            let path = dir.join(format!("{}.json", img.id));
            if path.is_file() {
                img.words = Some(WordSequence::load(&path)?);
            }
        }
    }
    Ok(dataset)
}

/// Parses annotation document text; `origin` only labels error messages.
pub fn parse_dataset(origin: &Path, text: &str) -> Result<Dataset> {
    let raw: RawDocument = parse_json(origin, text)?;
    for entry in &raw.attributes {
        Attribute::from_key(&entry.key)?;
    }

    let mut images: Vec<ImageRecord> = raw
        .images
        .into_iter()
        .map(|r| ImageRecord {
            file_name: r.file_name.unwrap_or_else(|| format!("{}.png", r.id)),
            id: r.id,
            width: r.width,
            height: r.height,
            split: r.split,
            instances: Vec::new(),
            words: None,
        })
        .collect();
    let index: HashMap<String, usize> = images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.id.clone(), i))
        .rev()
        .collect();

    for (n, ann) in raw.annotations.into_iter().enumerate() {
        let attribute = Attribute::from_key(&ann.attribute)?;
        let &slot = index.get(&ann.image_id).ok_or_else(|| {
            Error::malformed(
                origin,
                format!("annotations[{n}] references unknown image `{}`", ann.image_id),
            )
        })?;
        let img = &mut images[slot];
        let geometry = match (ann.segmentation, ann.bbox) {
            (Some(RawSegmentation::Polygons(polys)), _) => InstanceGeometry::Polygons(polys),
            (Some(RawSegmentation::Rle(rle)), _) => InstanceGeometry::Rle(rle),
            (None, Some([x, y, w, h])) => InstanceGeometry::Polygons(vec![Polygon::rect(x, y, w, h)]),
            (None, None) => {
                return Err(Error::malformed(
                    origin,
                    format!("annotations[{n}] has neither segmentation nor bbox"),
                ))
            }
        };
        if let InstanceGeometry::Polygons(polys) = &geometry {
            if let Some(bad) = polys.iter().position(|p| !p.within(img.width, img.height)) {
                return Err(Error::OutOfBoundsGeometry(format!(
                    "annotation {} polygon {bad} leaves {}x{} image `{}`",
                    ann.id, img.width, img.height, img.id
                )));
            }
        }
        img.instances.push(PolygonInstance {
            instance_id: ann.id,
            attribute,
            geometry,
        });
    }

    let mut dataset = Dataset::from_images(images);
    dataset.declared_attributes = raw.attributes;
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Fewer than three vertices.
    Geometry,
    /// Vertex or word box outside the image.
    Bounds,
    /// Textual, signature or handwriting instance that is not 4-sided.
    Shape,
    Dimensions,
    DuplicateId,
    /// Declared attribute table disagrees with the taxonomy.
    Taxonomy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, kind: ViolationKind, image_id: Option<&str>, detail: String) {
        self.violations.push(Violation {
            kind,
            image_id: image_id.map(str::to_string),
            detail,
        });
    }
}

pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();

    for entry in &dataset.declared_attributes {
        match Attribute::from_key(&entry.key) {
            Err(_) => report.push(
                ViolationKind::Taxonomy,
                None,
                format!("unknown attribute `{}`", entry.key),
            ),
            Ok(attr) => {
                if let Some(cat) = entry.category.filter(|&c| c != attr.category()) {
                    report.push(
                        ViolationKind::Taxonomy,
                        None,
                        format!("`{}` declared {cat}, taxonomy says {}", entry.key, attr.category()),
                    );
                }
            }
        }
    }

    let mut seen_ids: HashMap<&str, usize> = HashMap::new();
    for img in &dataset.images {
        let id = Some(img.id.as_str());
        if seen_ids.insert(&img.id, 0).is_some() {
            report.push(
                ViolationKind::DuplicateId,
                id,
                format!("image id `{}` repeated", img.id),
            );
        }
        if img.width == 0 || img.height == 0 {
            report.push(
                ViolationKind::Dimensions,
                id,
                format!("image is {}x{}", img.width, img.height),
            );
        }
        for inst in &img.instances {
            match &inst.geometry {
                InstanceGeometry::Polygons(polys) => {
                    for (p, poly) in polys.iter().enumerate() {
                        if poly.len() < 3 {
                            report.push(
                                ViolationKind::Geometry,
                                id,
                                format!("instance {} polygon {p} has {} vertices", inst.instance_id, poly.len()),
                            );
                        }
                        if !poly.within(img.width, img.height) {
                            report.push(
                                ViolationKind::Bounds,
                                id,
                                format!("instance {} polygon {p} leaves the image", inst.instance_id),
                            );
                        }
                        if inst.attribute.uses_quadrilaterals() && poly.len() >= 3 && !poly.is_quadrilateral() {
                            report.push(
                                ViolationKind::Shape,
                                id,
                                format!(
                                    "{} instance {} polygon {p} has {} vertices, expected 4",
                                    inst.attribute,
                                    inst.instance_id,
                                    poly.len()
                                ),
                            );
                        }
                    }
                }
                InstanceGeometry::Rle(rle) => {
                    if (rle.width, rle.height) != (img.width, img.height) {
                        report.push(
                            ViolationKind::Dimensions,
                            id,
                            format!("instance {} RLE is {}x{}", inst.instance_id, rle.width, rle.height),
                        );
                    } else if rle_decode(rle).is_err() {
                        report.push(
                            ViolationKind::Geometry,
                            id,
                            format!("instance {} RLE counts do not cover the image", inst.instance_id),
                        );
                    }
                }
            }
        }
        if let Some(seq) = &img.words {
            for w in &seq.words {
                if !w.quad.within(img.width, img.height) {
                    report.push(
                        ViolationKind::Bounds,
                        id,
                        format!("word {} (`{}`) box leaves the image", w.order_index, w.text),
                    );
                }
            }
        }
    }
    report
}

/// Score masks keyed by `(image_id, attribute)`.
pub type Predictions = BTreeMap<(String, Attribute), ScoreMask>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawManifest {
    predictions: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub attribute: Attribute,
    pub path: PathBuf,
}

/// Maps `(image_id, attribute)` to a score-mask PNG.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionManifest {
    pub entries: BTreeMap<(String, Attribute), PathBuf>,
}

impl PredictionManifest {
    /// Relative paths resolve against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw: RawManifest = parse_json_file(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut entries = BTreeMap::new();
        for e in raw.predictions {
            let resolved = if e.path.is_absolute() {
                e.path
            } else {
                base.join(e.path)
            };
            entries.insert((e.image_id, e.attribute), resolved);
        }
        Ok(PredictionManifest { entries })
    }

    /// Collects `<image_id>__<attribute>.png` files from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in read {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            let Some(stem) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".png"))
            else {
                continue;
            };
            let Some((image_id, key)) = stem.rsplit_once("__") else {
                continue;
            };
            entries.insert((image_id.to_string(), Attribute::from_key(key)?), path);
        }
        Ok(PredictionManifest { entries })
    }

    pub fn to_json(&self, base: Option<&Path>) -> serde_json::Value {
        let predictions: Vec<ManifestEntry> = self
            .entries
            .iter()
            .map(|((image_id, attribute), path)| ManifestEntry {
                image_id: image_id.clone(),
                attribute: *attribute,
                path: base
                    .and_then(|b| path.strip_prefix(b).ok())
                    .unwrap_or(path)
                    .to_path_buf(),
            })
            .collect();
        serde_json::to_value(RawManifest { predictions }).expect("plain data")
    }

    pub fn load_all(&self) -> Result<Predictions> {
        self.entries
            .iter()
            .map(|(key, path)| Ok((key.clone(), ScoreMask::load_png(path)?)))
            .collect()
    }
}

pub fn score_mask_file_name(image_id: &str, attribute: Attribute) -> String {
    format!("{image_id}__{attribute}.png")
}
