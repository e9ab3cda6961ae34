//! Redaction scaling: superpixel-granular dilation and erosion of ground-truth
//! masks, and per-attribute binarization thresholds for predicted score masks.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mask::{level_score, BinaryMask, ScoreMask};
use crate::superpixel::{project_mask, SuperpixelGraph, SuperpixelLabeling};
use crate::taxonomy::Attribute;

/// Multiplier on the ground-truth pixel count. `0` leaves the image intact,
/// `1` is the exact ground truth, infinity blacks out the whole image.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RedactionScale(f64);

impl RedactionScale {
    pub const ZERO: RedactionScale = RedactionScale(0.0);
    pub const ONE: RedactionScale = RedactionScale(1.0);
    pub const INF: RedactionScale = RedactionScale(f64::INFINITY);

    pub const DEFAULT_SET: [RedactionScale; 7] = [
        RedactionScale(0.0),
        RedactionScale(0.25),
        RedactionScale(0.5),
        RedactionScale(1.0),
        RedactionScale(2.0),
        RedactionScale(4.0),
        RedactionScale(f64::INFINITY),
    ];

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::InvalidScale(format!("{value}")));
        }
        Ok(RedactionScale(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for RedactionScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for RedactionScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(RedactionScale::INF);
        }
        let v: f64 = t.parse().map_err(|_| Error::InvalidScale(s.to_string()))?;
        RedactionScale::new(v)
    }
}

impl Serialize for RedactionScale {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Node-level greedy growth over the superpixel graph: repeatedly turns on
/// the off-node with the most on-neighbors, lowest id first among ties.
struct Greedy<'a> {
    graph: &'a SuperpixelGraph,
    on: Vec<bool>,
    on_neighbors: Vec<u32>,
    frontier: BTreeSet<(Reverse<u32>, u32)>,
    /// Per-node pixel count of the mask being grown, for the no-frontier case.
    seed_pixels: Vec<usize>,
}

impl<'a> Greedy<'a> {
    fn new(graph: &'a SuperpixelGraph, on: Vec<bool>, seed_pixels: Vec<usize>) -> Self {
        let mut on_neighbors = vec![0u32; on.len()];
        for &(a, b) in graph.edges() {
            if on[a as usize] {
                on_neighbors[b as usize] += 1;
            }
            if on[b as usize] {
                on_neighbors[a as usize] += 1;
            }
        }
        let frontier = (0..on.len())
            .filter(|&n| !on[n] && on_neighbors[n] > 0)
            .map(|n| (Reverse(on_neighbors[n]), n as u32))
            .collect();
        Greedy {
            graph,
            on,
            on_neighbors,
            frontier,
            seed_pixels,
        }
    }

    fn next(&mut self) -> Option<u32> {
        let node = match self.frontier.pop_first() {
            Some((_, node)) => node,
            // Happens only when no node is on yet (or the graph has
            // several components): start from the node holding most of
            // the grown mask.
            None => (0..self.on.len())
                .filter(|&n| !self.on[n])
                .max_by_key(|&n| (self.seed_pixels[n], Reverse(n)))? as u32,
        };
        self.on[node as usize] = true;
        for &nb in self.graph.neighbors(node) {
            let nb_i = nb as usize;
            if self.on[nb_i] {
                continue;
            }
            let c = self.on_neighbors[nb_i];
            if c > 0 {
                self.frontier.remove(&(Reverse(c), nb));
            }
            self.on_neighbors[nb_i] = c + 1;
            self.frontier.insert((Reverse(c + 1), nb));
        }
        Some(node)
    }
}

fn check_substrate(gt: &BinaryMask, labeling: &SuperpixelLabeling, graph: &SuperpixelGraph) -> Result<()> {
    if gt.dims() != labeling.dims() {
        return Err(Error::InconsistentSubstrate(format!(
            "mask is {:?}, labeling is {:?}",
            gt.dims(),
            labeling.dims()
        )));
    }
    if graph.node_count() != labeling.count() {
        return Err(Error::InconsistentSubstrate(format!(
            "graph has {} nodes, labeling has {} superpixels",
            graph.node_count(),
            labeling.count()
        )));
    }
    Ok(())
}

fn per_node_set_pixels(mask: &BinaryMask, labeling: &SuperpixelLabeling) -> Vec<usize> {
    let mut counts = vec![0usize; labeling.count()];
    for (&bit, &l) in mask.bits().iter().zip(labeling.labels()) {
        if bit {
            counts[l as usize] += 1;
        }
    }
    counts
}

/// Scales a ground-truth mask by `scale`; see [`scale_series`].
pub fn scale_mask(
    gt: &BinaryMask,
    scale: RedactionScale,
    labeling: &SuperpixelLabeling,
    graph: &SuperpixelGraph,
) -> Result<BinaryMask> {
    let mut series = scale_series(gt, &[scale], labeling, graph)?;
    Ok(series.pop().expect("one scale in, one mask out").1)
}

/// Masks for every requested scale, in the order given.
///
/// Dilation (`s > 1`) starts from the superpixel projection of `gt` united
/// with `gt` itself and adds whole superpixels until the mask holds at least
/// `min(s * |gt|, W * H)` pixels. Erosion (`s < 1`) runs the same growth on
/// the inverted mask and keeps the ground-truth pixels not yet swallowed,
/// stopping once at most `s * |gt|` remain. Each direction runs a single
/// greedy pass with snapshots, so masks are nested across scales.
pub fn scale_series(
    gt: &BinaryMask,
    scales: &[RedactionScale],
    labeling: &SuperpixelLabeling,
    graph: &SuperpixelGraph,
) -> Result<Vec<(RedactionScale, BinaryMask)>> {
    check_substrate(gt, labeling, graph)?;
    let gt_area = gt.area();
    let needs_gt = scales.iter().any(|s| s.value() != 0.0 && !s.is_infinite());
    if needs_gt && gt_area == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let (w, h) = gt.dims();

    let mut dilations: Vec<f64> = scales
        .iter()
        .map(|s| s.value())
        .filter(|&v| v > 1.0 && v.is_finite())
        .collect();
    dilations.sort_by(f64::total_cmp);
    dilations.dedup();
    let mut erosions: Vec<f64> = scales
        .iter()
        .map(|s| s.value())
        .filter(|&v| v > 0.0 && v < 1.0)
        .collect();
    erosions.sort_by(|a, b| b.total_cmp(a));
    erosions.dedup();

    let members = if dilations.is_empty() && erosions.is_empty() {
        Vec::new()
    } else {
        labeling.members()
    };
    let dilated = dilate_snapshots(gt, &dilations, labeling, graph, &members)?;
    let eroded = erode_snapshots(gt, &erosions, labeling, graph, &members)?;

    Ok(scales
        .iter()
        .map(|&s| {
            let v = s.value();
            let mask = if v == 0.0 {
                BinaryMask::empty(w, h)
            } else if s.is_infinite() {
                BinaryMask::full(w, h)
            } else if v == 1.0 {
                gt.clone()
            } else if v > 1.0 {
                dilated[dilations.iter().position(|&d| d == v).expect("collected")].clone()
            } else {
                eroded[erosions.iter().position(|&e| e == v).expect("collected")].clone()
            };
            (s, mask)
        })
        .collect())
}

fn dilate_snapshots(
    gt: &BinaryMask,
    factors: &[f64],
    labeling: &SuperpixelLabeling,
    graph: &SuperpixelGraph,
    members: &[Vec<u32>],
) -> Result<Vec<BinaryMask>> {
    if factors.is_empty() {
        return Ok(Vec::new());
    }
    let on = project_mask(gt, labeling)?;
    let mut bits = gt.bits().to_vec();
    for (node, _) in on.iter().enumerate().filter(|(_, &o)| o) {
        for &p in &members[node] {
            bits[p as usize] = true;
        }
    }
    let mut count = bits.iter().filter(|&&b| b).count();
    let total = bits.len() as f64;
    let gt_area = gt.area() as f64;
    let mut greedy = Greedy::new(graph, on, per_node_set_pixels(gt, labeling));

    let mut out = Vec::with_capacity(factors.len());
    for &factor in factors {
        let target = (factor * gt_area).min(total);
        while (count as f64) < target {
            let Some(node) = greedy.next() else { break };
            for &p in &members[node as usize] {
                let bit = &mut bits[p as usize];
                if !*bit {
                    *bit = true;
                    count += 1;
                }
            }
        }
        out.push(BinaryMask::from_bits(gt.width(), gt.height(), bits.clone())?);
    }
    Ok(out)
}

fn erode_snapshots(
    gt: &BinaryMask,
    factors: &[f64],
    labeling: &SuperpixelLabeling,
    graph: &SuperpixelGraph,
    members: &[Vec<u32>],
) -> Result<Vec<BinaryMask>> {
    if factors.is_empty() {
        return Ok(Vec::new());
    }
    let inverted = gt.inverted();
    let background = project_mask(&inverted, labeling)?;
    let mut bits = gt.bits().to_vec();
    for (node, _) in background.iter().enumerate().filter(|(_, &o)| o) {
        for &p in &members[node] {
            bits[p as usize] = false;
        }
    }
    let mut count = bits.iter().filter(|&&b| b).count();
    let gt_area = gt.area() as f64;
    let mut greedy = Greedy::new(graph, background, per_node_set_pixels(&inverted, labeling));

    let mut out = Vec::with_capacity(factors.len());
    for &factor in factors {
        let target = factor * gt_area;
        while (count as f64) > target {
            let Some(node) = greedy.next() else { break };
            for &p in &members[node as usize] {
                let bit = &mut bits[p as usize];
                if *bit {
                    *bit = false;
                    count -= 1;
                }
            }
        }
        out.push(BinaryMask::from_bits(gt.width(), gt.height(), bits.clone())?);
    }
    Ok(out)
}

/// Attributes rendered as their filled bounding box rather than their shape.
pub fn render_redaction_mask(mask: &BinaryMask, attribute: Attribute) -> BinaryMask {
    if attribute != Attribute::PhyDisb {
        return mask.clone();
    }
    let mut out = BinaryMask::empty(mask.width(), mask.height());
    if let Ok(b) = mask.tight_bbox() {
        out.fill_box(b);
    }
    out
}

pub const DEFAULT_MULTIPLIERS: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// One operating point for binarizing an attribute's score masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatingPoint {
    /// Redact pixels whose 8-bit score level is at least `level`.
    Score {
        multiplier: f64,
        level: u8,
        threshold: f64,
        predicted_pixels: u64,
    },
    /// Redact every detected word box.
    AllText,
}

impl OperatingPoint {
    pub fn multiplier(&self) -> Option<f64> {
        match self {
            OperatingPoint::Score { multiplier, .. } => Some(*multiplier),
            OperatingPoint::AllText => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ThresholdPlan {
    pub attributes: BTreeMap<Attribute, Vec<OperatingPoint>>,
}

impl ThresholdPlan {
    pub fn lookup(&self, attribute: Attribute, multiplier: f64) -> Option<&OperatingPoint> {
        self.attributes
            .get(&attribute)?
            .iter()
            .find(|p| p.multiplier() == Some(multiplier))
    }
}

/// One `(image, attribute)` pair of a split.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdSample<'a> {
    pub attribute: Attribute,
    pub scores: &'a ScoreMask,
    pub gt: &'a BinaryMask,
}

/// For each attribute and multiplier `t`, the 8-bit score level whose
/// predicted-pixel count over the whole split is closest to `t` times the
/// attribute's ground-truth pixel total. Ties go to the highest level.
/// Textual attributes also get an [`OperatingPoint::AllText`] entry.
pub fn select_thresholds(samples: &[ThresholdSample<'_>], multipliers: &[f64]) -> Result<ThresholdPlan> {
    let mut per_attr: BTreeMap<Attribute, ([u64; 256], u64)> = BTreeMap::new();
    for s in samples {
        if s.scores.dims() != s.gt.dims() {
            return Err(Error::DimensionMismatch {
                left: s.scores.dims(),
                right: s.gt.dims(),
            });
        }
        let entry = per_attr.entry(s.attribute).or_insert(([0; 256], 0));
        for (slot, n) in entry.0.iter_mut().zip(s.scores.level_histogram()) {
            *slot += n;
        }
        entry.1 += s.gt.area() as u64;
    }

    let mut plan = ThresholdPlan::default();
    for (attribute, (hist, gt_total)) in per_attr {
        if gt_total == 0 {
            return Err(Error::NoGroundTruth(attribute));
        }
        let mut at_least = [0u64; 256];
        let mut running = 0u64;
        for level in (0..256).rev() {
            running += hist[level];
            at_least[level] = running;
        }
        let mut points: Vec<OperatingPoint> = multipliers
            .iter()
            .map(|&t| {
                let target = t * gt_total as f64;
                let mut best = (f64::INFINITY, 0usize);
                for (level, &count) in at_least.iter().enumerate() {
                    let diff = (count as f64 - target).abs();
                    if diff <= best.0 {
                        best = (diff, level);
                    }
                }
                let level = best.1 as u8;
                OperatingPoint::Score {
                    multiplier: t,
                    level,
                    threshold: level_score(level),
                    predicted_pixels: at_least[best.1],
                }
            })
            .collect();
        if attribute.is_textual() {
            points.push(OperatingPoint::AllText);
        }
        plan.attributes.insert(attribute, points);
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpixel::adjacency;

    fn unit_grid(w: u32, h: u32) -> (SuperpixelLabeling, SuperpixelGraph) {
        let l = SuperpixelLabeling::from_labels(w, h, (0..w * h).collect()).unwrap();
        let g = adjacency(&l);
        (l, g)
    }

    fn block(w: u32, h: u32, x0: u32, y0: u32, bw: u32, bh: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh)
    }

    #[test]
    fn fixed_scales() {
        let (l, g) = unit_grid(10, 10);
        let gt = block(10, 10, 3, 3, 2, 2);
        assert!(scale_mask(&gt, RedactionScale::ZERO, &l, &g).unwrap().is_empty());
        assert_eq!(scale_mask(&gt, RedactionScale::INF, &l, &g).unwrap().area(), 100);
        assert_eq!(scale_mask(&gt, RedactionScale::ONE, &l, &g).unwrap(), gt);
    }

    #[test]
    fn empty_ground_truth_errors_for_finite_scales() {
        let (l, g) = unit_grid(4, 4);
        let gt = BinaryMask::empty(4, 4);
        assert!(scale_mask(&gt, RedactionScale::ZERO, &l, &g).is_ok());
        assert!(scale_mask(&gt, RedactionScale::INF, &l, &g).is_ok());
        assert!(matches!(
            scale_mask(&gt, RedactionScale::new(2.0).unwrap(), &l, &g),
            Err(Error::EmptyGroundTruth)
        ));
    }

    #[test]
    fn mismatched_substrate() {
        let (l, g) = unit_grid(4, 4);
        let gt = block(5, 5, 0, 0, 2, 2);
        assert!(matches!(
            scale_mask(&gt, RedactionScale::new(2.0).unwrap(), &l, &g),
            Err(Error::InconsistentSubstrate(_))
        ));
    }

    #[test]
    fn full_ground_truth_clamps() {
        let (l, g) = unit_grid(6, 6);
        let gt = BinaryMask::full(6, 6);
        let series = scale_series(&gt, &RedactionScale::DEFAULT_SET, &l, &g).unwrap();
        for (s, m) in &series {
            if s.value() >= 1.0 {
                assert_eq!(m.area(), 36, "scale {s}");
            }
        }
        // Erosion of a full mask has no background frontier and removes by id.
        let quarter = &series[1].1;
        assert_eq!(quarter.area(), 9);
        assert!(quarter.get(5, 5) && !quarter.get(0, 0));
    }

    #[test]
    fn scale_parsing() {
        assert_eq!("inf".parse::<RedactionScale>().unwrap(), RedactionScale::INF);
        assert_eq!("0.25".parse::<RedactionScale>().unwrap().value(), 0.25);
        assert!("-1".parse::<RedactionScale>().is_err());
        assert!("abc".parse::<RedactionScale>().is_err());
        assert_eq!(RedactionScale::INF.to_string(), "inf");
    }

    #[test]
    fn phy_disb_renders_bounding_box() {
        let mut l_shape = block(8, 8, 1, 1, 1, 5);
        l_shape.union_with(&block(8, 8, 1, 5, 4, 1)).unwrap();
        let rendered = render_redaction_mask(&l_shape, Attribute::PhyDisb);
        assert_eq!(rendered, block(8, 8, 1, 1, 4, 5));
        assert_eq!(render_redaction_mask(&l_shape, Attribute::Face), l_shape);
        assert!(render_redaction_mask(&BinaryMask::empty(8, 8), Attribute::PhyDisb).is_empty());
    }

    #[test]
    fn perfect_scores_pick_highest_level_at_t1() {
        let gt = block(8, 8, 0, 0, 4, 4);
        let scores = ScoreMask::from_binary(&gt);
        let plan = select_thresholds(
            &[ThresholdSample {
                attribute: Attribute::Face,
                scores: &scores,
                gt: &gt,
            }],
            &[1.0],
        )
        .unwrap();
        let points = &plan.attributes[&Attribute::Face];
        assert_eq!(points.len(), 1);
        assert!(matches!(
            points[0],
            OperatingPoint::Score {
                level: 255,
                predicted_pixels: 16,
                ..
            }
        ));
    }

    #[test]
    fn uniform_half_scores_predict_nothing_for_ten_percent_gt() {
        let gt = BinaryMask::from_fn(10, 10, |x, _| x == 0);
        let scores = ScoreMask::new(10, 10, vec![0.5; 100]).unwrap();
        let plan = select_thresholds(
            &[ThresholdSample {
                attribute: Attribute::Name,
                scores: &scores,
                gt: &gt,
            }],
            &[1.0],
        )
        .unwrap();
        let points = &plan.attributes[&Attribute::Name];
        let OperatingPoint::Score {
            threshold,
            predicted_pixels,
            ..
        } = points[0]
        else {
            panic!("score point expected");
        };
        assert_eq!(predicted_pixels, 0);
        assert!(threshold > 0.5);
        assert_eq!(points[1], OperatingPoint::AllText);
    }

    #[test]
    fn missing_ground_truth() {
        let gt = BinaryMask::empty(4, 4);
        let scores = ScoreMask::zeros(4, 4);
        assert!(matches!(
            select_thresholds(
                &[ThresholdSample {
                    attribute: Attribute::Face,
                    scores: &scores,
                    gt: &gt
                }],
                &DEFAULT_MULTIPLIERS
            ),
            Err(Error::NoGroundTruth(Attribute::Face))
        ));
    }
}
