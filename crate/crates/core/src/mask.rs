//! Binary and score masks, run-length encoding, and pixel-set measures.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{GrayImage, ImageEncoder, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon};

/// Row-major pixel membership.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

/// Axis-aligned pixel rectangle; `x + width` and `y + height` are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; pixel_count(width, height)],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![true; pixel_count(width, height)],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        let expected = pixel_count(width, height);
        if bits.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: bits.len(),
            });
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(pixel_count(width, height));
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.bits[i] = value;
    }

    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn area_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.area() as f64 / self.bits.len() as f64
    }

    pub fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count())
    }

    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect();
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn inverted(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// Whether every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Minimal enclosing rectangle of the set pixels.
    pub fn tight_bbox(&self) -> Result<PixelBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        let mut any = false;
        for (x, y) in self.iter_set() {
            any = true;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        if !any {
            return Err(Error::EmptyMask);
        }
        Ok(PixelBox {
            x: x0,
            y: y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
        })
    }

    pub fn fill_box(&mut self, b: PixelBox) {
        for y in b.y..(b.y + b.height).min(self.height) {
            for x in b.x..(b.x + b.width).min(self.width) {
                self.set(x, y, true);
            }
        }
    }

    /// Coordinates of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// 8-bit grayscale PNG, 255 for set pixels.
    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }
}

fn pixel_count(width: u32, height: u32) -> usize {
    width as usize * height as usize
}

/// Pixel-center membership in any of the polygons (even-odd per polygon,
/// union across polygons).
pub fn rasterize(polygons: &[Polygon], width: u32, height: u32) -> Result<BinaryMask> {
    let mut mask = BinaryMask::empty(width, height);
    for polygon in polygons {
        if polygon.len() < 3 {
            return Err(Error::DegenerateGeometry {
                vertices: polygon.len(),
            });
        }
        let Some((min_x, min_y, max_x, max_y)) = polygon.bounds() else {
            continue;
        };
        let x_range = pixel_span(min_x, max_x, width);
        let y_range = pixel_span(min_y, max_y, height);
        for y in y_range.clone() {
            for x in x_range.clone() {
                if polygon.contains(Point::pixel_center(x, y)) {
                    mask.set(x, y, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Pixels whose centers may fall in `[lo, hi]`, clamped to `[0, limit)`.
fn pixel_span(lo: f64, hi: f64, limit: u32) -> std::ops::Range<u32> {
    let start = (lo - 0.5).ceil().max(0.0);
    let end = ((hi - 0.5).floor() + 1.0).min(f64::from(limit));
    if start.partial_cmp(&end) != Some(std::cmp::Ordering::Less) {
        return 0..0;
    }
    start as u32..end as u32
}

/// Intersection over union; 1 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Pixelwise OR. An empty list yields `None` since there is no shape to use.
pub fn union_masks<'a>(masks: impl IntoIterator<Item = &'a BinaryMask>) -> Result<Option<BinaryMask>> {
    let mut iter = masks.into_iter();
    let Some(first) = iter.next() else {
        return Ok(None);
    };
    let mut out = first.clone();
    for m in iter {
        out.union_with(m)?;
    }
    Ok(Some(out))
}

/// Run lengths over the row-major pixel order, alternating zeros and ones
/// and always starting with a (possibly empty) run of zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &bit in &mask.bits {
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        width: mask.width,
        height: mask.height,
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    let expected = pixel_count(rle.width, rle.height);
    let actual: usize = rle.counts.iter().map(|&c| c as usize).sum();
    if actual != expected {
        return Err(Error::LengthMismatch { expected, actual });
    }
    let mut bits = Vec::with_capacity(expected);
    for (i, &count) in rle.counts.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, count as usize));
    }
    BinaryMask::from_bits(rle.width, rle.height, bits)
}

impl RleMask {
    pub fn area(&self) -> usize {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as usize).sum()
    }
}

/// Per-pixel confidence in `[0, 1]` for one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMask {
    width: u32,
    height: u32,
    scores: Vec<f32>,
}

impl ScoreMask {
    pub fn new(width: u32, height: u32, scores: Vec<f32>) -> Result<Self> {
        let expected = pixel_count(width, height);
        if scores.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: scores.len(),
            });
        }
        if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidScore(bad));
        }
        Ok(ScoreMask { width, height, scores })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        ScoreMask {
            width,
            height,
            scores: vec![0.0; pixel_count(width, height)],
        }
    }

    pub fn from_binary(mask: &BinaryMask) -> Self {
        ScoreMask {
            width: mask.width,
            height: mask.height,
            scores: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.scores[y as usize * self.width as usize + x as usize]
    }

    /// Pixels with `score >= threshold`.
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.scores.iter().map(|&s| f64::from(s) >= threshold).collect(),
        }
    }

    /// Pixels whose 8-bit quantized level is at least `level`.
    pub fn binarize_level(&self, level: u8) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.scores.iter().map(|&s| quantize(s) >= level).collect(),
        }
    }

    /// Count of pixels at each of the 256 quantized levels.
    pub fn level_histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &s in &self.scores {
            hist[quantize(s) as usize] += 1;
        }
        hist
    }

    /// Pixelwise maximum, used to union overlapping predictions.
    pub fn max_with(&mut self, other: &ScoreMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        for (a, &b) in self.scores.iter_mut().zip(&other.scores) {
            *a = a.max(b);
        }
        Ok(())
    }

    /// 8-bit grayscale, score = value / 255.
    pub fn from_gray_image(img: &GrayImage) -> Self {
        ScoreMask {
            width: img.width(),
            height: img.height(),
            scores: img.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect(),
        }
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_vec(
            self.width,
            self.height,
            self.scores.iter().map(|&s| quantize(s)).collect(),
        )
        .expect("buffer sized from dimensions")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        Ok(ScoreMask::from_gray_image(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = encode_png_gray(&self.to_gray_image())?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Nearest 8-bit level of a score in `[0, 1]`.
pub fn quantize(score: f32) -> u8 {
    (score.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Score represented by an 8-bit level.
pub fn level_score(level: u8) -> f64 {
    f64::from(level) / 255.0
}

pub(crate) fn encode_png_gray(img: &GrayImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::NoFilter).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::L8,
    )?;
    Ok(buf.into_inner())
}
