//! Textual attributes from OCR words: rule-based labeling, proxy ground
//! truth, token preprocessing and vocabulary, word-to-pixel conversion, the
//! text convex hull, and ingestion of externally predicted word labels.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::Deserialize;

use crate::dataset::{WordLabel, WordSequence};
use crate::error::{Error, Result};
use crate::geometry::{convex_hull, hull_contains, Point, Polygon};
use crate::mask::{rasterize, BinaryMask, ScoreMask};
use crate::taxonomy::Attribute;

const BUNDLED_NAMES: &str = include_str!("../data/gazetteers/names.txt");
const BUNDLED_PLACES: &str = include_str!("../data/gazetteers/places.txt");
const BUNDLED_NER_MAPPING: &str = include_str!("../data/mappings/ner_default.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GazetteerKind {
    Names,
    Places,
}

/// Case-folded lookup list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gazetteer {
    pub kind: GazetteerKind,
    entries: HashSet<String>,
}

impl Gazetteer {
    /// One entry per line; blank lines and `#` comments skipped.
    pub fn from_lines(kind: GazetteerKind, text: &str) -> Result<Self> {
        let entries: HashSet<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.to_lowercase())
            .collect();
        if entries.is_empty() {
            return Err(Error::InvalidInput("gazetteer has no entries".into()));
        }
        Ok(Gazetteer { kind, entries })
    }

    pub fn load(kind: GazetteerKind, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Gazetteer::from_lines(kind, &text)
    }

    pub fn bundled_names() -> Self {
        Gazetteer::from_lines(GazetteerKind::Names, BUNDLED_NAMES).expect("bundled list")
    }

    pub fn bundled_places() -> Self {
        Gazetteer::from_lines(GazetteerKind::Places, BUNDLED_PLACES).expect("bundled list")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact match on the lookup form of `word` (see [`lookup_form`]).
    pub fn contains(&self, word: &str) -> bool {
        let key = lookup_form(word);
        !key.is_empty() && self.entries.contains(&key)
    }

    pub fn remove(&mut self, entry: &str) -> bool {
        self.entries.remove(&entry.to_lowercase())
    }
}

/// Case-folded, with leading and trailing non-alphanumerics removed.
/// Digits are kept and nothing is stemmed.
pub fn lookup_form(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Per-word attribute sets; an empty set means safe.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordLabeling {
    pub labels: Vec<BTreeSet<Attribute>>,
}

impl WordLabeling {
    pub fn safe(len: usize) -> Self {
        WordLabeling {
            labels: vec![BTreeSet::new(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_safe(&self, i: usize) -> bool {
        self.labels[i].is_empty()
    }

    fn add(&mut self, i: usize, attrs: &[Attribute]) {
        self.labels[i].extend(attrs.iter().copied());
    }
}

const PLACE_ATTRS: [Attribute; 3] = [Attribute::Location, Attribute::Landmark, Attribute::HomeAddr];
const DIGIT_ATTRS: [Attribute; 3] = [Attribute::Datetime, Attribute::PhoneNo, Attribute::BirthDt];

/// Rule-based labeling. Rules fire independently and their labels are unioned:
/// a name-list hit gives `name`; a place-list hit gives `location`,
/// `landmark` and `home_addr`; any digit gives `datetime`, `phone_no` and
/// `birth_dt`; an `@` gives `emailadd` to the word and its immediate
/// neighbors in reading order.
pub fn rules_label(seq: &WordSequence, names: &Gazetteer, places: &Gazetteer) -> WordLabeling {
    let n = seq.len();
    let mut labeling = WordLabeling::safe(n);
    for (i, word) in seq.words.iter().enumerate() {
        let text = word.text.as_str();
        if names.contains(text) {
            labeling.add(i, &[Attribute::Name]);
        }
        if places.contains(text) {
            labeling.add(i, &PLACE_ATTRS);
        }
        if text.chars().any(|c| c.is_ascii_digit()) {
            labeling.add(i, &DIGIT_ATTRS);
        }
        if text.contains('@') {
            for j in i.saturating_sub(1)..=(i + 1).min(n - 1) {
                labeling.add(j, &[Attribute::EmailAdd]);
            }
        }
    }
    labeling
}

/// Assigns each word the textual attribute whose ground-truth mask overlaps
/// its box in the most pixels, or safe when nothing overlaps. Ties go to the
/// attribute with fewer ground-truth pixels in the image, then to key order.
/// Non-textual masks are ignored.
pub fn proxy_gt(seq: &WordSequence, gt: &BTreeMap<Attribute, BinaryMask>) -> Result<WordSequence> {
    let textual: Vec<(Attribute, &BinaryMask, usize)> = gt
        .iter()
        .filter(|(a, _)| a.is_textual())
        .map(|(&a, m)| (a, m, m.area()))
        .collect();
    let Some(&(_, first, _)) = textual.first() else {
        let mut out = seq.clone();
        for w in &mut out.words {
            w.label = Some(WordLabel::Safe);
        }
        return Ok(out);
    };
    for &(_, m, _) in &textual[1..] {
        first.check_same_dims(m)?;
    }
    let (width, height) = first.dims();

    let mut out = seq.clone();
    for word in &mut out.words {
        let box_mask = word_mask(&word.quad, width, height)?;
        let best = textual
            .iter()
            .map(|&(attr, m, total)| Ok((box_mask.intersection_area(m)?, total, attr)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|&(overlap, _, _)| overlap > 0)
            .min_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.key().cmp(b.2.key())));
        word.label = Some(match best {
            Some((_, _, attr)) => WordLabel::Attribute(attr),
            None => WordLabel::Safe,
        });
    }
    Ok(out)
}

fn word_mask(quad: &Polygon, width: u32, height: u32) -> Result<BinaryMask> {
    rasterize(std::slice::from_ref(quad), width, height)
}

/// Porter stemming repeated until the token stops changing.
fn stem_to_fixpoint(token: &str) -> String {
    let mut current = token.to_string();
    loop {
        let next = porter_stemmer::stem(&current);
        if next == current || next.is_empty() {
            return current;
        }
        current = next;
    }
}

/// Token form used for vocabularies: case-folded, every ASCII digit mapped to
/// `0`, surrounding punctuation stripped, and purely ASCII-alphabetic tokens
/// stemmed. Idempotent.
pub fn preprocess_word(word: &str) -> String {
    let folded: String = word
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_digit() { '0' } else { c })
        .collect();
    let trimmed = folded.trim_matches(|c: char| !c.is_alphanumeric());
    if !trimmed.is_empty() && trimmed.chars().all(|c| c.is_ascii_alphabetic()) {
        stem_to_fixpoint(trimmed)
    } else {
        trimmed.to_string()
    }
}

/// Token ids of a training vocabulary. Id 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: BTreeMap<String, u32>,
    pub min_count: usize,
}

impl Vocabulary {
    pub const UNKNOWN_ID: u32 = 0;

    /// Number of known tokens, excluding the unknown id.
    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(Self::UNKNOWN_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Preprocesses `word` and looks it up.
    pub fn encode_word(&self, word: &str) -> Option<u32> {
        let token = preprocess_word(word);
        (!token.is_empty()).then(|| self.id(&token))
    }

    pub fn tokens(&self) -> impl Iterator<Item = (&str, u32)> {
        self.ids.iter().map(|(t, &i)| (t.as_str(), i))
    }
}

/// Vocabulary of preprocessed tokens that occur at least `min_count` times.
/// Ids are assigned in lexicographic token order starting at 1. Callers pass
/// training-split sequences only.
pub fn build_vocab<'a>(train: impl IntoIterator<Item = &'a WordSequence>, min_count: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for seq in train {
        for w in &seq.words {
            let token = preprocess_word(&w.text);
            if !token.is_empty() {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(t, _)| t)
        .collect();
    kept.sort();
    let ids = kept.into_iter().enumerate().map(|(i, t)| (t, i as u32 + 1)).collect();
    Vocabulary { ids, min_count }
}

/// One score mask per textual attribute: 1 on the union of boxes of words
/// carrying that label, 0 elsewhere.
pub fn words_to_score_masks(
    labeling: &WordLabeling,
    seq: &WordSequence,
    width: u32,
    height: u32,
) -> Result<BTreeMap<Attribute, ScoreMask>> {
    if labeling.len() != seq.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} words",
            labeling.len(),
            seq.len()
        )));
    }
    let mut masks: BTreeMap<Attribute, BinaryMask> = Attribute::textual()
        .map(|a| (a, BinaryMask::empty(width, height)))
        .collect();
    for (word, labels) in seq.words.iter().zip(&labeling.labels) {
        if labels.is_empty() {
            continue;
        }
        let pixels = word_mask(&word.quad, width, height)?;
        for attr in labels {
            if let Some(m) = masks.get_mut(attr) {
                m.union_with(&pixels)?;
            }
        }
    }
    Ok(masks
        .into_iter()
        .map(|(a, m)| (a, ScoreMask::from_binary(&m)))
        .collect())
}

/// Union of every word box, the prediction used when all text is redacted.
pub fn all_text_mask(seq: &WordSequence, width: u32, height: u32) -> Result<BinaryMask> {
    let quads: Vec<Polygon> = seq.words.iter().map(|w| w.quad.clone()).collect();
    rasterize(&quads, width, height)
}

/// Filled convex hull of all box vertices, boundary inclusive.
pub fn text_hull(boxes: &[Polygon], width: u32, height: u32) -> BinaryMask {
    let points: Vec<Point> = boxes.iter().flat_map(|b| b.vertices().iter().copied()).collect();
    let hull = convex_hull(&points);
    if hull.is_empty() {
        return BinaryMask::empty(width, height);
    }
    BinaryMask::from_fn(width, height, |x, y| hull_contains(&hull, Point::pixel_center(x, y)))
}

/// External class name to textual attributes. An empty target list means safe.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassMapping {
    classes: BTreeMap<String, Vec<Attribute>>,
}

#[derive(Deserialize)]
struct MappingRow {
    class: String,
    attribute: String,
}

impl ClassMapping {
    /// CSV with header `class,attribute`; a class may repeat to map to
    /// several attributes, and `safe` maps it to nothing.
    pub fn from_csv(origin: &Path, text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut classes: BTreeMap<String, Vec<Attribute>> = BTreeMap::new();
        for (i, row) in reader.deserialize::<MappingRow>().enumerate() {
            let row = row.map_err(|e| Error::malformed(origin, format!("row {}: {e}", i + 1)))?;
            let targets = classes.entry(row.class).or_default();
            if row.attribute != "safe" {
                let attr = Attribute::from_key(&row.attribute)?;
                if !attr.is_textual() {
                    return Err(Error::malformed(
                        origin,
                        format!("row {}: `{attr}` is not a textual attribute", i + 1),
                    ));
                }
                if !targets.contains(&attr) {
                    targets.push(attr);
                }
            }
        }
        Ok(ClassMapping { classes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ClassMapping::from_csv(path, &text)
    }

    /// Seven-class NER defaults: PERSON, LOCATION, DATE and TIME map to
    /// attributes, the rest to safe.
    pub fn ner_default() -> Self {
        ClassMapping::from_csv(Path::new("ner_default.csv"), BUNDLED_NER_MAPPING).expect("bundled mapping")
    }

    pub fn get(&self, class: &str) -> Option<&[Attribute]> {
        self.classes.get(class).map(Vec::as_slice)
    }
}

#[derive(Debug, Deserialize)]
struct WordLabelRow {
    order_index: usize,
    class: String,
    #[serde(default)]
    #[allow(dead_code)]
    score: Option<f64>,
}

/// Reads external per-word predictions (CSV `order_index,class,score`) and
/// maps their classes into textual attributes. Unmapped classes become safe,
/// or an error in `strict` mode.
pub fn ingest_word_labels(
    path: &Path,
    seq: &WordSequence,
    mapping: &ClassMapping,
    strict: bool,
) -> Result<WordLabeling> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_labels(path, &text, seq, mapping, strict)
}

pub fn parse_word_labels(
    origin: &Path,
    text: &str,
    seq: &WordSequence,
    mapping: &ClassMapping,
    strict: bool,
) -> Result<WordLabeling> {
    let position: HashMap<usize, usize> = seq.words.iter().enumerate().map(|(i, w)| (w.order_index, i)).collect();
    let mut labeling = WordLabeling::safe(seq.len());
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    for (i, row) in reader.deserialize::<WordLabelRow>().enumerate() {
        let row = row.map_err(|e| Error::malformed(origin, format!("row {}: {e}", i + 1)))?;
        let &slot = position.get(&row.order_index).ok_or(Error::IndexOutOfRange {
            index: row.order_index,
            len: seq.len(),
        })?;
        match mapping.get(&row.class) {
            Some(attrs) => labeling.add(slot, attrs),
            None if strict => return Err(Error::UnknownMappingClass(row.class)),
            None => {}
        }
    }
    Ok(labeling)
}
