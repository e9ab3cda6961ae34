//! Privacy-utility analysis of redaction studies: majority labels per task,
//! per-condition percentages, curves with AUC, and a seeded synthetic judge
//! that stands in for human raters in tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::render::{Level, MaskSource, Redactor};
use crate::taxonomy::Attribute;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    fn from_bool(yes: bool) -> Self {
        if yes {
            Answer::Yes
        } else {
            Answer::No
        }
    }
}

/// One worker's answers for one redacted image. `privacy_answer` answers
/// whether the attribute is visible; `utility_answer` whether the image is
/// still intelligible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyResponse {
    pub image_id: String,
    pub attribute: Attribute,
    pub condition_id: String,
    pub worker_id: String,
    pub privacy_answer: Answer,
    pub utility_answer: Answer,
}

impl StudyResponse {
    pub fn task(&self) -> TaskKey {
        TaskKey {
            image_id: self.image_id.clone(),
            attribute: self.attribute,
            condition_id: self.condition_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskKey {
    pub image_id: String,
    pub attribute: Attribute,
    pub condition_id: String,
}

pub fn parse_responses(origin: &Path, text: &str) -> Result<Vec<StudyResponse>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::malformed(origin, e.to_string()))?
        .clone();
    for required in [
        "image_id",
        "attribute",
        "condition_id",
        "worker_id",
        "privacy_answer",
        "utility_answer",
    ] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::malformed(origin, format!("missing column `{required}`")));
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<StudyResponse>().enumerate() {
        let row = row.map_err(|e| Error::malformed(origin, format!("row {}: {e}", i + 1)))?;
        if !seen.insert((row.task(), row.worker_id.clone())) {
            return Err(Error::malformed(
                origin,
                format!(
                    "row {}: second response from worker `{}` for {}/{}/{}",
                    i + 1,
                    row.worker_id,
                    row.image_id,
                    row.attribute,
                    row.condition_id
                ),
            ));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn load_responses(path: &Path) -> Result<Vec<StudyResponse>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_responses(path, &text)
}

pub fn responses_to_csv(responses: &[StudyResponse]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in responses {
        writer.serialize(r).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TaskLabels {
    pub is_private: bool,
    pub has_utility: bool,
}

/// Strict majorities: private when more than half say the attribute is not
/// visible, useful when more than half say the image is intelligible.
pub fn majority_labels(responses: &[StudyResponse]) -> Result<TaskLabels> {
    if responses.is_empty() {
        return Err(Error::NoResponses);
    }
    let n = responses.len();
    let hidden = responses.iter().filter(|r| r.privacy_answer == Answer::No).count();
    let useful = responses.iter().filter(|r| r.utility_answer == Answer::Yes).count();
    Ok(TaskLabels {
        is_private: 2 * hidden > n,
        has_utility: 2 * useful > n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PuPoint {
    pub condition_id: String,
    /// Percent of images judged private.
    pub privacy: f64,
    /// Percent of images judged useful.
    pub utility: f64,
    pub n_images: usize,
}

pub fn pu_point(condition_id: &str, labels: &[TaskLabels]) -> Result<PuPoint> {
    if labels.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = labels.len();
    let private = labels.iter().filter(|l| l.is_private).count();
    let useful = labels.iter().filter(|l| l.has_utility).count();
    Ok(PuPoint {
        condition_id: condition_id.to_string(),
        privacy: 100.0 * private as f64 / n as f64,
        utility: 100.0 * useful as f64 / n as f64,
        n_images: n,
    })
}

/// Majority labels of every task, grouped by task key.
pub fn task_labels(responses: &[StudyResponse]) -> Result<BTreeMap<TaskKey, TaskLabels>> {
    let mut grouped: BTreeMap<TaskKey, Vec<StudyResponse>> = BTreeMap::new();
    for r in responses {
        grouped.entry(r.task()).or_default().push(r.clone());
    }
    grouped
        .into_iter()
        .map(|(k, rs)| Ok((k, majority_labels(&rs)?)))
        .collect()
}

/// One point per condition, in condition-id order. Every task counts as one
/// image, so an image judged under several attributes counts once for each.
pub fn aggregate_conditions(responses: &[StudyResponse]) -> Result<Vec<PuPoint>> {
    let mut by_condition: BTreeMap<String, Vec<TaskLabels>> = BTreeMap::new();
    for (key, labels) in task_labels(responses)? {
        by_condition.entry(key.condition_id).or_default().push(labels);
    }
    by_condition.iter().map(|(c, l)| pu_point(c, l)).collect()
}

/// Share of the image covered by the ground truth, bucketed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBucket {
    #[serde(rename = "0-10")]
    Small,
    #[serde(rename = "10-50")]
    Medium,
    #[serde(rename = ">50")]
    Large,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 3] = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];

    /// `fraction` in `[0, 1]`; bucket upper bounds are inclusive.
    pub fn of_fraction(fraction: f64) -> Self {
        if fraction <= 0.10 {
            SizeBucket::Small
        } else if fraction <= 0.50 {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeBucket::Small => "0-10",
            SizeBucket::Medium => "10-50",
            SizeBucket::Large => ">50",
        }
    }
}

/// Per-condition points split by the size of each task's ground truth.
/// Tasks whose `(image, attribute)` has no entry in `gt_fraction` are skipped.
pub fn aggregate_by_size(
    responses: &[StudyResponse],
    gt_fraction: &BTreeMap<(String, Attribute), f64>,
) -> Result<BTreeMap<SizeBucket, Vec<PuPoint>>> {
    let mut grouped: BTreeMap<(SizeBucket, String), Vec<TaskLabels>> = BTreeMap::new();
    for (key, labels) in task_labels(responses)? {
        let Some(&fraction) = gt_fraction.get(&(key.image_id.clone(), key.attribute)) else {
            continue;
        };
        grouped
            .entry((SizeBucket::of_fraction(fraction), key.condition_id))
            .or_default()
            .push(labels);
    }
    let mut out: BTreeMap<SizeBucket, Vec<PuPoint>> = BTreeMap::new();
    for ((bucket, condition), labels) in grouped {
        out.entry(bucket).or_default().push(pu_point(&condition, &labels)?);
    }
    Ok(out)
}

/// A vertex of the integrated curve, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveVertex {
    pub utility: f64,
    pub privacy: f64,
    pub anchor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PuCurve {
    pub points: Vec<PuPoint>,
    /// Points plus anchors, by utility descending.
    pub vertices: Vec<CurveVertex>,
    pub auc: f64,
}

/// Anchors the points at full utility (with the privacy of the most useful
/// point) and at full privacy (with the utility of the least useful point)
/// unless such points exist, then integrates privacy over utility with the
/// trapezoid rule, both scaled to `[0, 1]`.
pub fn pu_curve(points: &[PuPoint]) -> Result<PuCurve> {
    let mut unique: Vec<PuPoint> = Vec::with_capacity(points.len());
    for p in points {
        match unique.iter().find(|q| q.condition_id == p.condition_id) {
            Some(q) if q == p => {}
            Some(_) => {
                return Err(Error::InvalidInput(format!(
                    "condition `{}` appears with different values",
                    p.condition_id
                )))
            }
            None => unique.push(p.clone()),
        }
    }
    if unique.is_empty() {
        return Err(Error::EmptySet);
    }

    let mut vertices: Vec<CurveVertex> = unique
        .iter()
        .map(|p| CurveVertex {
            utility: p.utility,
            privacy: p.privacy,
            anchor: false,
        })
        .collect();
    let by_utility = |a: &&PuPoint, b: &&PuPoint| a.utility.total_cmp(&b.utility);
    let most_useful = unique.iter().max_by(by_utility).expect("nonempty");
    let least_useful = unique.iter().min_by(by_utility).expect("nonempty");
    if !unique.iter().any(|p| p.utility == 100.0) {
        vertices.push(CurveVertex {
            utility: 100.0,
            privacy: most_useful.privacy,
            anchor: true,
        });
    }
    if !unique.iter().any(|p| p.privacy == 100.0) {
        vertices.push(CurveVertex {
            utility: least_useful.utility,
            privacy: 100.0,
            anchor: true,
        });
    }
    vertices.sort_by(|a, b| b.utility.total_cmp(&a.utility).then(a.privacy.total_cmp(&b.privacy)));

    let auc = vertices
        .windows(2)
        .map(|w| (w[0].utility - w[1].utility) / 100.0 * (w[0].privacy + w[1].privacy) / 200.0)
        .sum();
    Ok(PuCurve {
        points: unique,
        vertices,
        auc,
    })
}

pub fn relative_auc(pred: &PuCurve, gt: &PuCurve) -> Result<f64> {
    if gt.auc == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(pred.auc / gt.auc)
}

/// CSV `condition_id,privacy,utility,n_images` followed by the AUC as a
/// trailing `auc,<value>,,` row.
pub fn curve_to_csv(curve: &PuCurve) -> String {
    let mut out = String::from("condition_id,privacy,utility,n_images\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{},{}", p.condition_id, p.privacy, p.utility, p.n_images);
    }
    let _ = writeln!(out, "auc,{},,", curve.auc);
    out
}

/// CSV `bucket,condition_id,privacy,utility,n_images`.
pub fn buckets_to_csv(buckets: &BTreeMap<SizeBucket, Vec<PuPoint>>) -> String {
    let mut out = String::from("bucket,condition_id,privacy,utility,n_images\n");
    for (bucket, points) in buckets {
        for p in points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                bucket.as_str(),
                p.condition_id,
                p.privacy,
                p.utility,
                p.n_images
            );
        }
    }
    out
}

/// Behavior of the simulated raters.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeParams {
    pub workers: usize,
    pub seed: u64,
    /// Minimum fraction of ground-truth pixels redacted for the attribute to
    /// count as hidden.
    pub coverage_threshold: f64,
    /// Probability that a worker reports "not visible" when coverage is met.
    pub hidden_confidence: f64,
    /// Probability that a worker reports "visible" when coverage is not met.
    pub visible_confidence: f64,
    /// Probability of "intelligible" is `1 - clamp(redacted_fraction * k)`.
    pub utility_slope: f64,
}

impl Default for JudgeParams {
    fn default() -> Self {
        JudgeParams {
            workers: 5,
            seed: 0,
            coverage_threshold: 1.0,
            hidden_confidence: 1.0,
            visible_confidence: 1.0,
            utility_slope: 1.0,
        }
    }
}

impl JudgeParams {
    pub fn utility_probability(&self, redacted_fraction: f64) -> f64 {
        1.0 - (redacted_fraction * self.utility_slope).clamp(0.0, 1.0)
    }
}

/// Stream per (seed, image, attribute, worker). The condition is left out so
/// that each worker keeps its draws across redaction levels.
fn worker_rng(seed: u64, image_id: &str, attribute: Attribute, worker: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    h.update([0]);
    h.update(attribute.key().as_bytes());
    h.update([0]);
    h.update((worker as u64).to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(bytes)
}

/// Simulated responses of `params.workers` raters for one redacted image.
/// With the default parameters the privacy answer is deterministic and the
/// utility answer is monotone in the redacted area for each worker.
pub fn synthetic_judge(
    redaction: &BinaryMask,
    gt: &BinaryMask,
    task: &TaskKey,
    params: &JudgeParams,
) -> Result<Vec<StudyResponse>> {
    redaction.check_same_dims(gt)?;
    let gt_area = gt.area();
    let coverage = if gt_area == 0 {
        1.0
    } else {
        redaction.intersection_area(gt)? as f64 / gt_area as f64
    };
    let covered = coverage >= params.coverage_threshold;
    let p_useful = params.utility_probability(redaction.area_fraction());

    Ok((0..params.workers)
        .map(|w| {
            let mut rng = worker_rng(params.seed, &task.image_id, task.attribute, w);
            let privacy_draw: f64 = rng.random();
            let utility_draw: f64 = rng.random();
            let visible = if covered {
                privacy_draw >= params.hidden_confidence
            } else {
                privacy_draw < params.visible_confidence
            };
            StudyResponse {
                image_id: task.image_id.clone(),
                attribute: task.attribute,
                condition_id: task.condition_id.clone(),
                worker_id: format!("sim-{w}"),
                privacy_answer: Answer::from_bool(visible),
                utility_answer: Answer::from_bool(utility_draw < p_useful),
            }
        })
        .collect())
}

/// Judges every redaction level of every annotated `(image, attribute)` of
/// `images` with the synthetic judge. Ground-truth levels come from the
/// redactor's scale set, prediction levels from its multipliers plus
/// all-text for textual attributes; prediction levels without a score mask
/// or calibrated threshold are skipped.
pub fn simulate_study(
    redactor: &Redactor,
    image_ids: &[String],
    source: MaskSource,
    params: &JudgeParams,
) -> Result<Vec<StudyResponse>> {
    let levels: Vec<Level> = match source {
        MaskSource::GroundTruth => redactor
            .config()
            .scales
            .iter()
            .map(|s| Level::Value(s.value()))
            .collect(),
        MaskSource::Prediction => redactor
            .config()
            .multipliers
            .iter()
            .map(|&t| Level::Value(t))
            .chain([Level::AllText])
            .collect(),
    };
    let mut out = Vec::new();
    for id in image_ids {
        let record = redactor
            .dataset()
            .image(id)
            .ok_or_else(|| Error::NotFound(format!("image `{id}`")))?;
        for attribute in record.attributes() {
            let gt = record.attribute_mask(attribute)?;
            for &level in &levels {
                if source == MaskSource::Prediction {
                    let usable = match level {
                        Level::AllText => attribute.is_textual(),
                        Level::Value(t) => {
                            redactor.predictions().contains_key(&(id.clone(), attribute))
                                && redactor.plan().lookup(attribute, t).is_some()
                        }
                    };
                    if !usable {
                        continue;
                    }
                }
                let mask = redactor.selection_mask(id, attribute, level, source)?;
                let task = TaskKey {
                    image_id: id.clone(),
                    attribute,
                    condition_id: level.to_string(),
                };
                out.extend(synthetic_judge(&mask, &gt, &task, params)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(worker: &str, visible: bool, useful: bool) -> StudyResponse {
        StudyResponse {
            image_id: "img".into(),
            attribute: Attribute::Face,
            condition_id: "s1".into(),
            worker_id: worker.into(),
            privacy_answer: Answer::from_bool(visible),
            utility_answer: Answer::from_bool(useful),
        }
    }

    fn point(id: &str, utility: f64, privacy: f64) -> PuPoint {
        PuPoint {
            condition_id: id.into(),
            privacy,
            utility,
            n_images: 1,
        }
    }

    fn task() -> TaskKey {
        TaskKey {
            image_id: "img".into(),
            attribute: Attribute::Face,
            condition_id: "s1".into(),
        }
    }

    #[test]
    fn majority() {
        let all_no: Vec<_> = (0..5).map(|w| response(&w.to_string(), false, true)).collect();
        assert!(majority_labels(&all_no).unwrap().is_private);
        let all_yes: Vec<_> = (0..5).map(|w| response(&w.to_string(), true, true)).collect();
        assert!(!majority_labels(&all_yes).unwrap().is_private);
        let split: Vec<_> = (0..5).map(|w| response(&w.to_string(), w >= 3, w < 2)).collect();
        let l = majority_labels(&split).unwrap();
        assert!(l.is_private);
        assert!(!l.has_utility);
        let tie: Vec<_> = (0..4).map(|w| response(&w.to_string(), w < 2, w < 2)).collect();
        assert_eq!(
            majority_labels(&tie).unwrap(),
            TaskLabels {
                is_private: false,
                has_utility: false
            }
        );
        assert!(matches!(majority_labels(&[]), Err(Error::NoResponses)));
    }

    #[test]
    fn point_percentages() {
        let labels: Vec<_> = (0..6)
            .map(|i| TaskLabels {
                is_private: i < 3,
                has_utility: true,
            })
            .collect();
        let p = pu_point("s", &labels).unwrap();
        assert_eq!((p.privacy, p.utility, p.n_images), (50.0, 100.0, 6));
        assert!(matches!(pu_point("s", &[]), Err(Error::EmptySet)));
    }

    #[test]
    fn curve_examples() {
        let flat: Vec<_> = (0..=4)
            .map(|i| point(&i.to_string(), 100.0 - 25.0 * i as f64, 100.0))
            .collect();
        assert_eq!(pu_curve(&flat).unwrap().auc, 1.0);
        let linear = pu_curve(&[point("a", 100.0, 0.0), point("b", 0.0, 100.0)]).unwrap();
        assert_eq!(linear.auc, 0.5);
        assert!(linear.vertices.iter().all(|v| !v.anchor));
    }

    #[test]
    fn curve_anchors() {
        let c = pu_curve(&[point("a", 80.0, 20.0), point("b", 40.0, 60.0)]).unwrap();
        let v: Vec<(f64, f64, bool)> = c.vertices.iter().map(|v| (v.utility, v.privacy, v.anchor)).collect();
        assert_eq!(
            v,
            vec![
                (100.0, 20.0, true),
                (80.0, 20.0, false),
                (40.0, 60.0, false),
                (40.0, 100.0, true)
            ]
        );
        // 0.2 * 0.2 + 0.4 * 0.4
        assert!((c.auc - 0.2).abs() < 1e-12);
    }

    #[test]
    fn relative() {
        let a = pu_curve(&[point("a", 100.0, 0.0), point("b", 0.0, 100.0)]).unwrap();
        assert_eq!(relative_auc(&a, &a).unwrap(), 1.0);
        let zero = pu_curve(&[point("a", 100.0, 0.0), point("b", 0.0, 0.0), point("c", 0.0, 100.0)]).unwrap();
        assert_eq!(zero.auc, 0.0);
        assert!(matches!(relative_auc(&a, &zero), Err(Error::ZeroBaseline)));
    }

    #[test]
    fn responses_csv_roundtrip() {
        let rs = vec![response("w1", true, false), response("w2", false, true)];
        let text = responses_to_csv(&rs);
        assert!(text.starts_with("image_id,attribute,condition_id,worker_id,privacy_answer,utility_answer\n"));
        assert!(text.contains("img,face,s1,w1,yes,no"));
        assert_eq!(parse_responses(Path::new("r.csv"), &text).unwrap(), rs);
        let dup = responses_to_csv(&[response("w1", true, false), response("w1", false, false)]);
        assert!(parse_responses(Path::new("r.csv"), &dup).is_err());
        assert!(parse_responses(Path::new("r.csv"), "image_id,attribute\n").is_err());
    }

    #[test]
    fn judge_steps_on_coverage() {
        let gt = BinaryMask::from_fn(10, 10, |x, y| x < 4 && y < 4);
        let half = BinaryMask::from_fn(10, 10, |x, y| x < 2 && y < 4);
        let exact = synthetic_judge(&gt, &gt, &task(), &JudgeParams::default()).unwrap();
        assert_eq!(exact.len(), 5);
        assert!(exact.iter().all(|r| r.privacy_answer == Answer::No));
        let partial = synthetic_judge(&half, &gt, &task(), &JudgeParams::default()).unwrap();
        assert!(!majority_labels(&partial).unwrap().is_private);
        let full = synthetic_judge(&BinaryMask::full(10, 10), &gt, &task(), &JudgeParams::default()).unwrap();
        assert!(full
            .iter()
            .all(|r| r.utility_answer == Answer::No && r.privacy_answer == Answer::No));
        assert!(synthetic_judge(&BinaryMask::empty(3, 3), &gt, &task(), &JudgeParams::default()).is_err());
    }

    #[test]
    fn judge_is_deterministic() {
        let gt = BinaryMask::from_fn(10, 10, |x, _| x < 3);
        let params = JudgeParams {
            seed: 7,
            ..JudgeParams::default()
        };
        let a = synthetic_judge(&gt, &gt, &task(), &params).unwrap();
        assert_eq!(a, synthetic_judge(&gt, &gt, &task(), &params).unwrap());
    }

    #[test]
    fn buckets() {
        assert_eq!(SizeBucket::of_fraction(0.05), SizeBucket::Small);
        assert_eq!(SizeBucket::of_fraction(0.10), SizeBucket::Small);
        assert_eq!(SizeBucket::of_fraction(0.3), SizeBucket::Medium);
        assert_eq!(SizeBucket::of_fraction(0.51), SizeBucket::Large);
    }
}
