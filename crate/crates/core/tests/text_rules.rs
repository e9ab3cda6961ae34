use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redact_core::dataset::{WordLabel, WordSequence};
use redact_core::geometry::Polygon;
use redact_core::mask::{rasterize, BinaryMask};
use redact_core::taxonomy::Attribute;
use redact_core::text::{build_vocab, preprocess_word, proxy_gt, rules_label, text_hull, Gazetteer, GazetteerKind};

use Attribute::*;

const PLACE: &[Attribute] = &[Location, Landmark, HomeAddr];
const DIGIT: &[Attribute] = &[Datetime, PhoneNo, BirthDt];

fn labels(parts: &[&[Attribute]]) -> BTreeSet<Attribute> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

#[test]
fn golden_forty_words() {
    let names = Gazetteer::from_lines(GazetteerKind::Names, "Alice\nBob\nMaria\n").unwrap();
    let places = Gazetteer::from_lines(GazetteerKind::Places, "Berlin\nParis\n").unwrap();
    let e: &[Attribute] = &[EmailAdd];
    let n: &[Attribute] = &[Name];
    let safe: &[&[Attribute]] = &[];
    let golden: Vec<(&str, Vec<&[Attribute]>)> = vec![
        ("Dear", safe.to_vec()),
        ("Alice,", vec![n]),
        ("thanks", vec![]),
        ("for", vec![]),
        ("visiting", vec![]),
        ("Berlin", vec![PLACE]),
        ("on", vec![]),
        ("12/03/2017", vec![DIGIT]),
        ("Please", vec![]),
        ("email", vec![]),
        ("bob", vec![n, e]),
        ("@", vec![e]),
        ("example.org", vec![e]),
        ("or", vec![]),
        ("call", vec![]),
        ("555-0199", vec![DIGIT]),
        ("Room", vec![]),
        ("4B", vec![DIGIT]),
        ("PARIS", vec![PLACE, e]),
        ("maria@mail.com", vec![e]),
        ("tomorrow", vec![e]),
        ("at", vec![]),
        ("9am", vec![DIGIT]),
        ("the", vec![]),
        ("museum", vec![]),
        ("near", vec![]),
        ("Paris.", vec![PLACE]),
        ("Regards", vec![]),
        ("Maria", vec![n]),
        ("(Berlin)", vec![PLACE, e]),
        ("x@y.z", vec![e]),
        ("2nd", vec![DIGIT, e]),
        ("floor", vec![]),
        ("ALICE", vec![n]),
        ("berlin!", vec![PLACE]),
        ("office", vec![]),
        ("hours", vec![]),
        ("10-12", vec![DIGIT]),
        ("bye", vec![e]),
        ("@home", vec![e]),
    ];
    assert_eq!(golden.len(), 40);
    let seq = WordSequence::from_boxes(
        golden
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (*w, i as f64 * 4.0, 0.0, 3.0, 3.0)),
    );
    let out = rules_label(&seq, &names, &places);
    for (i, (word, parts)) in golden.iter().enumerate() {
        assert_eq!(out.labels[i], labels(parts), "word {i} `{word}`");
    }
}

/// Random integer rectangles inside a `w` x `h` image.
fn random_rect(rng: &mut ChaCha8Rng, w: u32, h: u32) -> (u32, u32, u32, u32) {
    let x = rng.random_range(0..w - 1);
    let y = rng.random_range(0..h - 1);
    let bw = rng.random_range(1..=(w - x).min(10));
    let bh = rng.random_range(1..=(h - y).min(6));
    (x, y, bw, bh)
}

#[test]
fn proxy_gt_matches_overlap_oracle() {
    let (w, h) = (32u32, 24u32);
    let textual: Vec<Attribute> = Attribute::textual().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for fixture in 0..100 {
        let mut gt: BTreeMap<Attribute, BinaryMask> = BTreeMap::new();
        for _ in 0..rng.random_range(0..4) {
            let attr = textual[rng.random_range(0..textual.len())];
            let (x, y, bw, bh) = random_rect(&mut rng, w, h);
            let m = gt.entry(attr).or_insert_with(|| BinaryMask::empty(w, h));
            for yy in y..y + bh {
                for xx in x..x + bw {
                    m.set(xx, yy, true);
                }
            }
        }
        let boxes: Vec<(u32, u32, u32, u32)> = (0..rng.random_range(1..6))
            .map(|_| random_rect(&mut rng, w, h))
            .collect();
        let seq = WordSequence::from_boxes(
            boxes
                .iter()
                .map(|&(x, y, bw, bh)| ("w", f64::from(x), f64::from(y), f64::from(bw), f64::from(bh))),
        );
        let out = proxy_gt(&seq, &gt).unwrap();

        for (i, &(x, y, bw, bh)) in boxes.iter().enumerate() {
            let mut best: Option<(usize, usize, &str, Attribute)> = None;
            for (&attr, m) in &gt {
                let overlap = (y..y + bh)
                    .flat_map(|yy| (x..x + bw).map(move |xx| (xx, yy)))
                    .filter(|&(xx, yy)| m.get(xx, yy))
                    .count();
                if overlap == 0 {
                    continue;
                }
                let cand = (overlap, m.area(), attr.key(), attr);
                best = match best {
                    None => Some(cand),
                    Some(b) => {
                        let better =
                            cand.0 > b.0 || (cand.0 == b.0 && (cand.1 < b.1 || (cand.1 == b.1 && cand.2 < b.2)));
                        Some(if better { cand } else { b })
                    }
                };
            }
            let expected = best.map_or(WordLabel::Safe, |b| WordLabel::Attribute(b.3));
            assert_eq!(out.words[i].label, Some(expected), "fixture {fixture} word {i}");
        }
    }
}

#[test]
fn vocabulary_counts_match_oracle() {
    let pool = [
        "Running", "runs", "Berlin", "berlin,", "2017", "1999", "the", "THE", "Alice", "x@y.z", "agreed", "!!",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seqs: Vec<WordSequence> = (0..20)
        .map(|_| {
            let words: Vec<&str> = (0..rng.random_range(3..9))
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect();
            WordSequence::from_boxes(words.into_iter().map(|w| (w, 0.0, 0.0, 1.0, 1.0)))
        })
        .collect();
    let vocab = build_vocab(&seqs, 4);

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in &seqs {
        for w in &s.words {
            let t = preprocess_word(&w.text);
            if !t.is_empty() {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let kept: Vec<&String> = counts.iter().filter(|(_, &c)| c >= 4).map(|(t, _)| t).collect();
    assert_eq!(vocab.size(), kept.len());
    for (i, t) in kept.iter().enumerate() {
        assert_eq!(vocab.id(t), i as u32 + 1);
    }
    for (t, &c) in &counts {
        assert_eq!(vocab.contains(t), c >= 4, "{t}");
    }
}

proptest! {
    #[test]
    fn preprocess_is_idempotent(word in "[A-Za-z0-9@.,!()/é-]{0,12}") {
        let once = preprocess_word(&word);
        prop_assert_eq!(preprocess_word(&once), once.clone());
        prop_assert!(!once.chars().any(|c| c.is_ascii_digit() && c != '0'));
    }

    #[test]
    fn hull_covers_boxes_within_their_extent(
        rects in prop::collection::vec((0u32..20, 0u32..14, 1u32..6, 1u32..5), 1..5)
    ) {
        let boxes: Vec<Polygon> = rects
            .iter()
            .map(|&(x, y, w, h)| Polygon::rect(f64::from(x), f64::from(y), f64::from(w), f64::from(h)))
            .collect();
        let hull = text_hull(&boxes, 26, 20);
        let union = rasterize(&boxes, 26, 20).unwrap();
        prop_assert!(union.is_subset_of(&hull));
        let x0 = rects.iter().map(|r| r.0).min().unwrap();
        let y0 = rects.iter().map(|r| r.1).min().unwrap();
        let x1 = rects.iter().map(|r| r.0 + r.2).max().unwrap();
        let y1 = rects.iter().map(|r| r.1 + r.3).max().unwrap();
        for (x, y) in hull.iter_set() {
            prop_assert!(x >= x0 && x < x1 && y >= y0 && y < y1);
        }
    }
}
