//! Deterministic generator for the small bundled test corpus: synthetic
//! images, annotations, OCR words and noisy score masks.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redact_core::dataset::{score_mask_file_name, Split, WordSequence};
use redact_core::geometry::{Point, Polygon};
use redact_core::mask::{rasterize, BinaryMask, ScoreMask};
use redact_core::render::encode_png_rgb;
use redact_core::taxonomy::Attribute;
use serde_json::{json, Value};

pub const WIDTH: u32 = 160;
pub const HEIGHT: u32 = 120;
pub const IMAGE_COUNT: usize = 12;
const SEED: u64 = 20170412;

struct Shape {
    attribute: Attribute,
    polygon: Polygon,
    color: [u8; 3],
}

struct Scene {
    id: String,
    split: Split,
    shapes: Vec<Shape>,
    words: Vec<(String, f64, f64, f64, f64)>,
    /// Words annotated as textual instances, by index into `words`.
    text_instances: Vec<(Attribute, usize)>,
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Polygon {
    let pts = (0..24)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 24.0;
            Point::new((cx + rx * a.cos()).round(), (cy + ry * a.sin()).round())
        })
        .collect();
    Polygon(pts)
}

fn quad(points: [(f64, f64); 4]) -> Polygon {
    Polygon(points.iter().map(|&(x, y)| Point::new(x, y)).collect())
}

fn split_of(i: usize) -> Split {
    match i % 4 {
        0 | 1 => Split::Train,
        2 => Split::Val,
        _ => Split::Test,
    }
}

fn scene(i: usize, rng: &mut ChaCha8Rng) -> Scene {
    let id = format!("img_{i:02}");
    let mut shapes = Vec::new();
    let mut words: Vec<(String, f64, f64, f64, f64)> = Vec::new();
    let mut text_instances = Vec::new();
    let jx = rng.random_range(0..12) as f64;
    let jy = rng.random_range(0..8) as f64;

    match i % 4 {
        0 => {
            shapes.push(Shape {
                attribute: Attribute::Person,
                polygon: quad([
                    (30.0 + jx, 20.0 + jy),
                    (90.0 + jx, 20.0 + jy),
                    (96.0 + jx, 110.0),
                    (24.0 + jx, 110.0),
                ]),
                color: [70, 90, 150],
            });
            shapes.push(Shape {
                attribute: Attribute::Face,
                polygon: ellipse(60.0 + jx, 42.0 + jy, 16.0, 20.0),
                color: [224, 172, 140],
            });
            // too small to count in evaluation
            shapes.push(Shape {
                attribute: Attribute::Face,
                polygon: Polygon::rect(125.0, 15.0, 18.0, 18.0),
                color: [210, 160, 130],
            });
        }
        1 => {
            shapes.push(Shape {
                attribute: Attribute::Receipt,
                polygon: quad([(4.0, 8.0 + jy), (156.0, 8.0 + jy), (156.0, 112.0), (4.0, 112.0)]),
                color: [236, 234, 222],
            });
            let y0 = 16.0 + jy;
            let line = |words: &mut Vec<_>, texts: &[&str], y: f64| {
                let mut x = 10.0;
                for t in texts {
                    let w = (t.len() as f64 * 9.0).min(54.0);
                    words.push((t.to_string(), x, y, w, 14.0));
                    x += w + 6.0;
                }
            };
            line(&mut words, &["invoice", "for", "Alice"], y0);
            text_instances.push((Attribute::Name, 2));
            line(&mut words, &["Berlin", "12/03/2017"], y0 + 18.0);
            text_instances.push((Attribute::Location, 3));
            text_instances.push((Attribute::Datetime, 4));
            line(&mut words, &["alice", "@", "example.org"], y0 + 36.0);
            text_instances.push((Attribute::EmailAdd, 5));
            text_instances.push((Attribute::EmailAdd, 6));
            text_instances.push((Attribute::EmailAdd, 7));
            line(&mut words, &["total", "paid"], y0 + 54.0);
        }
        2 => {
            shapes.push(Shape {
                attribute: Attribute::CrCard,
                polygon: quad([
                    (15.0 + jx, 30.0),
                    (75.0 + jx, 24.0),
                    (80.0 + jx, 64.0),
                    (20.0 + jx, 70.0),
                ]),
                color: [40, 120, 80],
            });
            shapes.push(Shape {
                attribute: Attribute::LicPlate,
                polygon: Polygon::rect(100.0, 80.0 + jy, 44.0, 16.0),
                color: [245, 245, 120],
            });
            words.push(("KA".into(), 104.0, 83.0 + jy, 12.0, 10.0));
            words.push(("0123".into(), 120.0, 83.0 + jy, 20.0, 10.0));
        }
        _ => {
            shapes.push(Shape {
                attribute: Attribute::Person,
                polygon: ellipse(50.0 + jx, 65.0, 28.0, 45.0),
                color: [150, 70, 60],
            });
            shapes.push(Shape {
                attribute: Attribute::PhyDisb,
                polygon: quad([(95.0, 60.0 + jy), (150.0, 70.0 + jy), (140.0, 110.0), (105.0, 100.0)]),
                color: [60, 60, 70],
            });
            shapes.push(Shape {
                attribute: Attribute::Handwrit,
                polygon: Polygon::rect(100.0 + jx / 2.0, 8.0, 50.0, 30.0),
                color: [200, 200, 255],
            });
        }
    }
    Scene {
        id,
        split: split_of(i),
        shapes,
        words,
        text_instances,
    }
}

fn render(scene: &Scene, rng: &mut ChaCha8Rng) -> Result<RgbImage> {
    let tint = rng.random_range(0..60) as u8;
    let mut img = RgbImage::from_fn(WIDTH, HEIGHT, |x, y| {
        Rgb([
            (60 + x * 100 / WIDTH) as u8 + tint / 2,
            (90 + y * 80 / HEIGHT) as u8,
            140 - tint,
        ])
    });
    let paint = |img: &mut RgbImage, mask: &BinaryMask, color: [u8; 3]| {
        for (x, y) in mask.iter_set() {
            img.put_pixel(x, y, Rgb(color));
        }
    };
    for s in &scene.shapes {
        paint(
            &mut img,
            &rasterize(std::slice::from_ref(&s.polygon), WIDTH, HEIGHT)?,
            s.color,
        );
    }
    for (_, x, y, w, h) in &scene.words {
        paint(
            &mut img,
            &rasterize(&[Polygon::rect(*x, *y, *w, *h)], WIDTH, HEIGHT)?,
            [35, 35, 40],
        );
    }
    for px in img.pixels_mut() {
        for c in &mut px.0 {
            *c = c.saturating_add(rng.random_range(0..3));
        }
    }
    Ok(img)
}

/// Noisy scores, high on the ground truth, medium near it and low
/// elsewhere. The noise is constant on 4x4 cells to keep the files small.
fn predicted_scores(gt: &BinaryMask, rng: &mut ChaCha8Rng) -> ScoreMask {
    let (w, h) = gt.dims();
    let cells_x = w.div_ceil(4);
    let noise: Vec<f32> = (0..cells_x * h.div_ceil(4)).map(|_| rng.random()).collect();
    let near = BinaryMask::from_fn(w, h, |x, y| {
        let x0 = x.saturating_sub(3);
        let y0 = y.saturating_sub(3);
        (y0..(y + 4).min(h)).any(|yy| (x0..(x + 4).min(w)).any(|xx| gt.get(xx, yy)))
    });
    let scores = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let u = noise[((y / 4) * cells_x + x / 4) as usize];
            if gt.get(x, y) {
                0.45 + 0.55 * u
            } else if near.get(x, y) {
                0.15 + 0.5 * u
            } else {
                0.3 * u * u
            }
        })
        .collect();
    ScoreMask::new(w, h, scores).expect("scores in range")
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `annotations.json`, `images/`, `ocr/` and `predictions/` into `dir`.
pub fn write_corpus(dir: &Path) -> Result<()> {
    for sub in ["images", "ocr", "predictions"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let scenes: Vec<Scene> = (0..IMAGE_COUNT).map(|i| scene(i, &mut rng)).collect();

    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut next_id = 1u64;
    let mut gt_masks: Vec<Vec<(Attribute, BinaryMask)>> = Vec::new();
    for s in &scenes {
        let file_name = format!("images/{}.png", s.id);
        let img = render(s, &mut rng)?;
        fs::write(dir.join(&file_name), encode_png_rgb(&img)?)?;
        images.push(json!({
            "id": s.id, "file_name": file_name, "width": WIDTH, "height": HEIGHT, "split": s.split,
        }));

        let mut polys: Vec<(Attribute, Polygon)> =
            s.shapes.iter().map(|sh| (sh.attribute, sh.polygon.clone())).collect();
        for &(attribute, w) in &s.text_instances {
            let (_, x, y, bw, bh) = &s.words[w];
            polys.push((attribute, Polygon::rect(*x, *y, *bw, *bh)));
        }
        let mut masks: Vec<(Attribute, BinaryMask)> = Vec::new();
        for (attribute, poly) in polys {
            annotations.push(json!({
                "id": next_id, "image_id": s.id, "attribute": attribute, "segmentation": [poly.to_flat()],
            }));
            next_id += 1;
            let m = rasterize(&[poly], WIDTH, HEIGHT)?;
            match masks.iter_mut().find(|(a, _)| *a == attribute) {
                Some((_, acc)) => acc.union_with(&m)?,
                None => masks.push((attribute, m)),
            }
        }
        gt_masks.push(masks);

        if !s.words.is_empty() {
            let seq = WordSequence::from_boxes(s.words.iter().map(|(t, x, y, w, h)| (t.as_str(), *x, *y, *w, *h)));
            write_json(&dir.join("ocr").join(format!("{}.json", s.id)), &seq.to_json())?;
        }
    }

    let attributes: Vec<Value> = Attribute::ALL
        .iter()
        .map(|a| json!({"key": a, "category": a.category(), "name": a.display_name()}))
        .collect();
    write_json(
        &dir.join("annotations.json"),
        &json!({"attributes": attributes, "images": images, "annotations": annotations}),
    )?;

    let used: BTreeSet<Attribute> = gt_masks.iter().flatten().map(|(a, _)| *a).collect();
    let mut entries = Vec::new();
    for (s, masks) in scenes.iter().zip(&gt_masks) {
        for &attribute in &used {
            let gt = masks
                .iter()
                .find(|(a, _)| *a == attribute)
                .map_or_else(|| BinaryMask::empty(WIDTH, HEIGHT), |(_, m)| m.clone());
            let name = score_mask_file_name(&s.id, attribute);
            predicted_scores(&gt, &mut rng).save_png(&dir.join("predictions").join(&name))?;
            entries.push(json!({"image_id": s.id, "attribute": attribute, "path": name}));
        }
    }
    write_json(
        &dir.join("predictions").join("manifest.json"),
        &json!({"predictions": entries}),
    )?;
    Ok(())
}
