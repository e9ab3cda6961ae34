//! Pixel-level segmentation evaluation: precision-recall over a threshold
//! grid, monotone correction, trapezoidal AP, mAP, and annotator agreement.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::{Dataset, ImageRecord, Predictions};
use crate::error::{Error, Result};
use crate::mask::{iou, BinaryMask, ScoreMask};
use crate::taxonomy::{Attribute, Category};

/// GT instances with fewer pixels than this are ignored.
pub const MIN_INSTANCE_AREA: usize = 25 * 25;
pub const DEFAULT_THRESHOLD_COUNT: usize = 50;

/// `count` thresholds evenly spaced over `[0, 1]`, both ends included.
pub fn threshold_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    /// `None` for the extrapolated recall-0 point of a corrected curve.
    pub threshold: Option<f64>,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub attribute: Attribute,
    pub points: Vec<PrPoint>,
    pub corrected: bool,
}

/// Ground truth of one image for one attribute after the ignore rule.
#[derive(Debug, Clone, PartialEq)]
pub struct IgnoreOutcome {
    pub kept: BinaryMask,
    /// Pixels of ignored instances that are not covered by a kept instance.
    pub dont_care: BinaryMask,
    pub kept_instances: usize,
    pub ignored_instances: usize,
}

/// Drops instances under `min_area` pixels and marks their pixels
/// don't-care.
pub fn apply_ignore_rule(instances: &[BinaryMask], dims: (u32, u32), min_area: usize) -> Result<IgnoreOutcome> {
    let mut kept = BinaryMask::empty(dims.0, dims.1);
    let mut ignored = BinaryMask::empty(dims.0, dims.1);
    let (mut kept_instances, mut ignored_instances) = (0, 0);
    for inst in instances {
        if inst.area() < min_area {
            ignored.union_with(inst)?;
            ignored_instances += 1;
        } else {
            kept.union_with(inst)?;
            kept_instances += 1;
        }
    }
    let dont_care = ignored.difference(&kept)?;
    Ok(IgnoreOutcome {
        kept,
        dont_care,
        kept_instances,
        ignored_instances,
    })
}

/// One image's inputs to [`pr_curve`].
#[derive(Debug, Clone, Copy)]
pub struct PrSample<'a> {
    pub scores: &'a ScoreMask,
    pub gt: &'a BinaryMask,
    /// Pixels excluded from every count.
    pub dont_care: Option<&'a BinaryMask>,
}

/// Summed image-size-normalized counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PrCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
}

impl PrCounts {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0.0 {
            1.0
        } else {
            self.tp / (self.tp + self.fp)
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0.0 {
            1.0
        } else {
            self.tp / (self.tp + self.fn_)
        }
    }
}

/// Per-threshold counts for a set of images; a pixel is predicted when its
/// score is at least the threshold.
pub fn pr_counts(samples: &[PrSample<'_>], thresholds: &[f64]) -> Result<Vec<PrCounts>> {
    let mut totals = vec![PrCounts::default(); thresholds.len()];
    for s in samples {
        let dims = s.scores.dims();
        for other in [Some(s.gt), s.dont_care].into_iter().flatten() {
            if other.dims() != dims {
                return Err(Error::DimensionMismatch {
                    left: dims,
                    right: other.dims(),
                });
            }
        }
        let area = (dims.0 as f64) * (dims.1 as f64);
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (i, &score) in s.scores.scores().iter().enumerate() {
            if s.dont_care.is_some_and(|d| d.bits()[i]) {
                continue;
            }
            if s.gt.bits()[i] {
                positives.push(score);
            } else {
                negatives.push(score);
            }
        }
        positives.sort_by(f32::total_cmp);
        negatives.sort_by(f32::total_cmp);
        for (slot, &t) in totals.iter_mut().zip(thresholds) {
            let below_pos = positives.partition_point(|&v| f64::from(v) < t);
            let below_neg = negatives.partition_point(|&v| f64::from(v) < t);
            slot.tp += (positives.len() - below_pos) as f64 / area;
            slot.fn_ += below_pos as f64 / area;
            slot.fp += (negatives.len() - below_neg) as f64 / area;
        }
    }
    Ok(totals)
}

/// Raw (uncorrected) precision-recall curve, one point per threshold.
pub fn pr_curve(attribute: Attribute, samples: &[PrSample<'_>], thresholds: &[f64]) -> Result<PrCurve> {
    let counts = pr_counts(samples, thresholds)?;
    let points = thresholds
        .iter()
        .zip(counts)
        .map(|(&t, c)| PrPoint {
            threshold: Some(t),
            precision: c.precision(),
            recall: c.recall(),
        })
        .collect();
    Ok(PrCurve {
        attribute,
        points,
        corrected: false,
    })
}

/// Points sorted by recall with each recall's best precision kept.
fn collapse_by_recall(points: &[PrPoint]) -> Vec<PrPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.recall.total_cmp(&b.recall).then(b.precision.total_cmp(&a.precision)));
    sorted.dedup_by(|later, first| later.recall == first.recall);
    sorted
}

/// Replaces each precision with the best precision at equal or higher
/// recall and adds a recall-0 point carrying the overall best precision.
pub fn correct_pr(curve: &PrCurve) -> PrCurve {
    let mut points = collapse_by_recall(&curve.points);
    let mut best = f64::NEG_INFINITY;
    for p in points.iter_mut().rev() {
        best = best.max(p.precision);
        p.precision = best;
    }
    if let Some(first) = points.first() {
        if first.recall > 0.0 {
            let anchor = PrPoint {
                threshold: None,
                precision: first.precision,
                recall: 0.0,
            };
            points.insert(0, anchor);
        }
    }
    PrCurve {
        attribute: curve.attribute,
        points,
        corrected: true,
    }
}

/// Trapezoidal area under precision over recall, between the smallest and
/// largest recall of the curve. Duplicate recalls use their best precision.
pub fn average_precision(curve: &PrCurve) -> f64 {
    collapse_by_recall(&curve.points)
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub min_instance_area: usize,
    /// Count pixels of ignored instances as background instead of don't-care.
    pub count_ignored_as_background: bool,
    /// Treat a missing score mask as all zeros instead of failing.
    pub lenient_missing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: threshold_grid(DEFAULT_THRESHOLD_COUNT),
            min_instance_area: MIN_INSTANCE_AREA,
            count_ignored_as_background: false,
            lenient_missing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeResult {
    pub attribute: Attribute,
    pub category: Category,
    pub ap: f64,
    pub kept_instances: usize,
    pub ignored_instances: usize,
}

/// All values are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub thresholds: usize,
    pub attributes: Vec<AttributeResult>,
    pub category_map: BTreeMap<Category, f64>,
    pub overall_map: Option<f64>,
    /// Attributes with no kept ground truth in the evaluated images.
    pub excluded: Vec<Attribute>,
    pub ignored_instances: usize,
    pub missing_predictions: usize,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Builds the report from per-attribute APs. Attributes absent from `aps`
/// but listed in `excluded` carry through as excluded.
pub fn mean_ap(
    results: Vec<AttributeResult>,
    excluded: Vec<Attribute>,
    n_images: usize,
    thresholds: usize,
    missing_predictions: usize,
) -> EvalReport {
    let mut category_map = BTreeMap::new();
    for cat in Category::ALL {
        let aps: Vec<f64> = results.iter().filter(|r| r.category == cat).map(|r| r.ap).collect();
        if let Some(m) = mean(&aps) {
            category_map.insert(cat, m);
        }
    }
    let all: Vec<f64> = results.iter().map(|r| r.ap).collect();
    let ignored_instances = results.iter().map(|r| r.ignored_instances).sum();
    EvalReport {
        n_images,
        thresholds,
        overall_map: mean(&all),
        attributes: results,
        category_map,
        excluded,
        ignored_instances,
        missing_predictions,
    }
}

/// Curves and the report for a set of images.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub curves: Vec<PrCurve>,
}

/// Evaluates every attribute with kept ground truth among `images`.
pub fn evaluate<'a>(
    images: impl IntoIterator<Item = &'a ImageRecord>,
    predictions: &Predictions,
    config: &EvalConfig,
) -> Result<Evaluation> {
    let images: Vec<&ImageRecord> = images.into_iter().collect();
    let mut results = Vec::new();
    let mut curves = Vec::new();
    let mut excluded = Vec::new();
    let mut missing = 0;

    for attribute in Attribute::ALL {
        let mut outcomes = Vec::with_capacity(images.len());
        let mut zeros = Vec::new();
        for img in &images {
            let dims = (img.width, img.height);
            let outcome = apply_ignore_rule(&img.instance_masks(attribute)?, dims, config.min_instance_area)?;
            let key = (img.id.clone(), attribute);
            if !predictions.contains_key(&key) {
                if !config.lenient_missing {
                    return Err(Error::MissingPrediction {
                        image_id: img.id.clone(),
                        attribute,
                    });
                }
                missing += 1;
                zeros.push(key.clone());
            }
            outcomes.push((key, outcome));
        }
        let kept: usize = outcomes.iter().map(|(_, o)| o.kept_instances).sum();
        let ignored: usize = outcomes.iter().map(|(_, o)| o.ignored_instances).sum();
        if kept == 0 {
            excluded.push(attribute);
            continue;
        }

        let zero_masks: BTreeMap<&(String, Attribute), ScoreMask> = zeros
            .iter()
            .map(|k| {
                let img = images.iter().find(|i| i.id == k.0).expect("image listed");
                (k, ScoreMask::zeros(img.width, img.height))
            })
            .collect();
        let samples: Vec<PrSample<'_>> = outcomes
            .iter()
            .map(|(key, o)| PrSample {
                scores: predictions.get(key).unwrap_or_else(|| &zero_masks[key]),
                gt: &o.kept,
                dont_care: (!config.count_ignored_as_background).then_some(&o.dont_care),
            })
            .collect();
        let raw = pr_curve(attribute, &samples, &config.thresholds)?;
        let ap = average_precision(&correct_pr(&raw));
        results.push(AttributeResult {
            attribute,
            category: attribute.category(),
            ap,
            kept_instances: kept,
            ignored_instances: ignored,
        });
        curves.push(raw);
    }

    let report = mean_ap(results, excluded, images.len(), config.thresholds.len(), missing);
    Ok(Evaluation { report, curves })
}

impl EvalReport {
    /// JSON with AP values as percentages, grouped by category.
    pub fn to_percent_json(&self) -> serde_json::Value {
        let pct = |v: f64| serde_json::json!(v * 100.0);
        let mut categories = serde_json::Map::new();
        for cat in Category::ALL {
            let attrs: serde_json::Map<String, serde_json::Value> = self
                .attributes
                .iter()
                .filter(|r| r.category == cat)
                .map(|r| (r.attribute.key().to_string(), pct(r.ap)))
                .collect();
            categories.insert(
                cat.as_str().to_string(),
                serde_json::json!({
                    "attributes": attrs,
                    "map": self.category_map.get(&cat).map(|&v| pct(v)),
                }),
            );
        }
        serde_json::json!({
            "n_images": self.n_images,
            "thresholds": self.thresholds,
            "categories": categories,
            "overall_map": self.overall_map.map(pct),
            "excluded": self.excluded,
            "ignored_instances": self.ignored_instances,
            "missing_predictions": self.missing_predictions,
        })
    }

    /// Plain-text table, one row per category plus the overall mAP.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for cat in Category::ALL {
            let cells: Vec<String> = self
                .attributes
                .iter()
                .filter(|r| r.category == cat)
                .map(|r| format!("{} {:.1}", r.attribute.key(), r.ap * 100.0))
                .collect();
            let map = self
                .category_map
                .get(&cat)
                .map_or("-".to_string(), |v| format!("{:.1}", v * 100.0));
            let _ = writeln!(out, "{:<10} mAP {:>5} | {}", cat.as_str(), map, cells.join("  "));
        }
        let overall = self
            .overall_map
            .map_or("-".to_string(), |v| format!("{:.1}", v * 100.0));
        let _ = writeln!(out, "{:<10} mAP {:>5}", "ALL", overall);
        out
    }
}

/// CSV `attribute,threshold,precision,recall` of raw curves.
pub fn curves_to_csv(curves: &[PrCurve]) -> String {
    let mut out = String::from("attribute,threshold,precision,recall\n");
    for c in curves {
        for p in &c.points {
            let t = p.threshold.map_or(String::new(), |t| t.to_string());
            let _ = writeln!(out, "{},{},{},{}", c.attribute.key(), t, p.precision, p.recall);
        }
    }
    out
}

/// Mean over images of the IoU between the two annotation sets' union of
/// all attribute masks. Images empty in both count as 1.
pub fn miou_agreement(a: &Dataset, b: &Dataset) -> Result<f64> {
    let mut ids_a: Vec<&str> = a.images().iter().map(|i| i.id.as_str()).collect();
    let mut ids_b: Vec<&str> = b.images().iter().map(|i| i.id.as_str()).collect();
    ids_a.sort_unstable();
    ids_b.sort_unstable();
    if ids_a != ids_b {
        let only_a: Vec<&str> = ids_a.iter().filter(|i| !ids_b.contains(i)).copied().collect();
        let only_b: Vec<&str> = ids_b.iter().filter(|i| !ids_a.contains(i)).copied().collect();
        return Err(Error::ImageSetMismatch(format!(
            "only in first: {only_a:?}; only in second: {only_b:?}"
        )));
    }
    if ids_a.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut total = 0.0;
    for img in a.images() {
        let other = b.image(&img.id).expect("same id set");
        total += iou(&img.all_attributes_mask()?, &other.all_attributes_mask()?)?;
    }
    Ok(total / a.images().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(recall: f64, precision: f64) -> PrPoint {
        PrPoint {
            threshold: Some(0.5),
            precision,
            recall,
        }
    }

    fn curve(points: Vec<PrPoint>) -> PrCurve {
        PrCurve {
            attribute: Attribute::Face,
            points,
            corrected: false,
        }
    }

    fn rp(c: &PrCurve) -> Vec<(f64, f64)> {
        c.points.iter().map(|p| (p.recall, p.precision)).collect()
    }

    #[test]
    fn grid() {
        let g = threshold_grid(50);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[49], 1.0);
        assert!((g[1] - 1.0 / 49.0).abs() < 1e-15);
    }

    #[test]
    fn correction_examples() {
        let c = correct_pr(&curve(vec![pt(0.2, 0.5), pt(0.6, 0.8)]));
        assert_eq!(rp(&c), vec![(0.0, 0.8), (0.2, 0.8), (0.6, 0.8)]);
        let single = correct_pr(&curve(vec![pt(1.0, 1.0)]));
        assert_eq!(rp(&single), vec![(0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(average_precision(&single), 1.0);
        let mono = correct_pr(&curve(vec![pt(0.1, 0.9), pt(0.5, 0.7), pt(1.0, 0.2)]));
        assert_eq!(rp(&mono), vec![(0.0, 0.9), (0.1, 0.9), (0.5, 0.7), (1.0, 0.2)]);
        assert!(correct_pr(&curve(vec![])).points.is_empty());
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gt = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let perfect = ScoreMask::from_binary(&gt);
        let grid = threshold_grid(50);
        let c = pr_curve(
            Attribute::Face,
            &[PrSample {
                scores: &perfect,
                gt: &gt,
                dont_care: None,
            }],
            &grid,
        )
        .unwrap();
        assert!(c.points[1..].iter().all(|p| p.precision == 1.0 && p.recall == 1.0));
        assert_eq!(average_precision(&correct_pr(&c)), 1.0);

        let zeros = ScoreMask::zeros(4, 4);
        let c = pr_curve(
            Attribute::Face,
            &[PrSample {
                scores: &zeros,
                gt: &gt,
                dont_care: None,
            }],
            &grid,
        )
        .unwrap();
        assert!(c.points[1..].iter().all(|p| p.precision == 1.0 && p.recall == 0.0));
    }

    #[test]
    fn uniform_score_half_coverage() {
        let gts = [
            BinaryMask::from_fn(4, 4, |x, _| x < 2),
            BinaryMask::from_fn(6, 2, |_, y| y == 0),
        ];
        let ones: Vec<ScoreMask> = gts
            .iter()
            .map(|g| ScoreMask::from_binary(&BinaryMask::full(g.width(), g.height())))
            .collect();
        let samples: Vec<PrSample<'_>> = gts
            .iter()
            .zip(&ones)
            .map(|(gt, s)| PrSample {
                scores: s,
                gt,
                dont_care: None,
            })
            .collect();
        let c = correct_pr(&pr_curve(Attribute::Face, &samples, &threshold_grid(50)).unwrap());
        assert_eq!(rp(&c), vec![(0.0, 0.5), (1.0, 0.5)]);
        assert_eq!(average_precision(&c), 0.5);
    }

    #[test]
    fn ignore_rule_boundary() {
        let small = BinaryMask::from_fn(60, 60, |x, y| x < 24 && y < 24);
        let big = BinaryMask::from_fn(60, 60, |x, y| (30..55).contains(&x) && (30..55).contains(&y));
        assert_eq!(small.area(), 576);
        assert_eq!(big.area(), 625);
        let o = apply_ignore_rule(&[small.clone(), big.clone()], (60, 60), MIN_INSTANCE_AREA).unwrap();
        assert_eq!(o.kept, big);
        assert_eq!(o.dont_care, small);
        assert_eq!((o.kept_instances, o.ignored_instances), (1, 1));
    }

    #[test]
    fn dont_care_contributes_nothing() {
        let small = BinaryMask::from_fn(30, 30, |x, y| x < 24 && y < 24);
        let o = apply_ignore_rule(std::slice::from_ref(&small), (30, 30), MIN_INSTANCE_AREA).unwrap();
        let scores = ScoreMask::from_binary(&small);
        let counts = pr_counts(
            &[PrSample {
                scores: &scores,
                gt: &o.kept,
                dont_care: Some(&o.dont_care),
            }],
            &threshold_grid(50),
        )
        .unwrap();
        assert!(counts[1..].iter().all(|c| *c == PrCounts::default()));
        // t = 0 still predicts the pixels outside the don't-care region
        assert!((counts[0].fp - (900.0 - 576.0) / 900.0).abs() < 1e-12);
    }

    #[test]
    fn map_is_unweighted_mean() {
        let r = |attribute: Attribute, ap| AttributeResult {
            attribute,
            category: attribute.category(),
            ap,
            kept_instances: 1,
            ignored_instances: 0,
        };
        let report = mean_ap(
            vec![
                r(Attribute::Face, 1.0),
                r(Attribute::Person, 0.5),
                r(Attribute::Name, 0.0),
            ],
            vec![],
            1,
            50,
            0,
        );
        assert_eq!(report.overall_map, Some(0.5));
        assert_eq!(report.category_map[&Category::Visual], 0.75);
        assert_eq!(report.category_map[&Category::Textual], 0.0);
        assert!(!report.category_map.contains_key(&Category::Multimodal));
    }
}
