use proptest::prelude::*;
use redact_core::mask::{BinaryMask, ScoreMask};
use redact_core::scaling::{scale_series, select_thresholds, OperatingPoint, RedactionScale, ThresholdSample};
use redact_core::superpixel::{adjacency, SuperpixelLabeling};
use redact_core::taxonomy::Attribute;

/// Labeling of rectangular cells with uneven column and row cuts.
fn cell_labeling(w: u32, h: u32, cols: &[u32], rows: &[u32]) -> SuperpixelLabeling {
    let col_of = |x: u32| cols.iter().filter(|&&c| c <= x).count() as u32;
    let row_of = |y: u32| rows.iter().filter(|&&r| r <= y).count() as u32;
    let ncols = cols.len() as u32 + 1;
    let labels = (0..w * h).map(|i| row_of(i / w) * ncols + col_of(i % w)).collect();
    SuperpixelLabeling::from_labels(w, h, labels).unwrap()
}

fn cuts(max: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::btree_set(1..max, 0..6).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn series_is_nested_and_tight(
        cols in cuts(24),
        rows in cuts(18),
        gx in 0u32..20, gy in 0u32..14, gw in 1u32..8, gh in 1u32..6,
    ) {
        let (w, h) = (24, 18);
        let labeling = cell_labeling(w, h, &cols, &rows);
        let graph = adjacency(&labeling);
        let gt = BinaryMask::from_fn(w, h, |x, y| x >= gx && x < gx + gw && y >= gy && y < gy + gh);
        let scales: Vec<RedactionScale> = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, f64::INFINITY]
            .iter()
            .map(|&v| RedactionScale::new(v).unwrap())
            .collect();
        let series = scale_series(&gt, &scales, &labeling, &graph).unwrap();
        for pair in series.windows(2) {
            prop_assert!(pair[0].1.is_subset_of(&pair[1].1), "{} then {}", pair[0].0, pair[1].0);
        }
        prop_assert!(series[0].1.is_empty());
        prop_assert_eq!(&series[3].1, &gt);
        prop_assert_eq!(series[6].1.area(), (w * h) as usize);
        let largest = graph.largest_node();
        for (s, m) in &series[1..6] {
            let target = s.value() * gt.area() as f64;
            if target <= f64::from(w * h) {
                prop_assert!((m.area() as f64) < target + largest as f64, "s={} area={} target={}", s, m.area(), target);
            }
            if s.value() > 1.0 {
                prop_assert!(gt.is_subset_of(m));
                prop_assert!(m.area() as f64 >= target.min(f64::from(w * h)));
            } else {
                prop_assert!(m.is_subset_of(&gt));
                prop_assert!(m.area() as f64 <= target);
            }
        }
    }
}

/// Brute-force level search: smallest |count(score level >= j) - t * gt|,
/// ties to the higher level.
fn oracle_level(levels: &[u8], gt_total: f64, t: f64) -> u8 {
    let mut best: Option<(f64, u8)> = None;
    for j in 0..=255u8 {
        let count = levels.iter().filter(|&&l| l >= j).count() as f64;
        let diff = (count - t * gt_total).abs();
        if best.is_none_or(|(d, _)| diff <= d) {
            best = Some((diff, j));
        }
    }
    best.unwrap().1
}

#[test]
fn threshold_staircase_matches_exhaustive_search() {
    let (w, h) = (32u32, 16u32);
    // each level 0..=255 appears on two pixels
    let scores: Vec<f32> = (0..w * h).map(|i| (i / 2) as f32 / 255.0).collect();
    let levels: Vec<u8> = (0..w * h).map(|i| (i / 2) as u8).collect();
    let sm = ScoreMask::new(w, h, scores).unwrap();
    let gt = BinaryMask::from_fn(w, h, |x, y| y < 2 && x < 20);
    let multipliers = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let plan = select_thresholds(
        &[ThresholdSample {
            attribute: Attribute::Face,
            scores: &sm,
            gt: &gt,
        }],
        &multipliers,
    )
    .unwrap();
    for &t in &multipliers {
        let Some(OperatingPoint::Score { level, .. }) = plan.lookup(Attribute::Face, t) else {
            panic!("missing point for {t}");
        };
        assert_eq!(*level, oracle_level(&levels, gt.area() as f64, t), "t={t}");
    }
}
