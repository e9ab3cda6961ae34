//! SLIC0 superpixels and the region adjacency graph used for redaction scaling.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Per-pixel superpixel ids in `[0, count)`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelLabeling {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    count: u32,
}

impl SuperpixelLabeling {
    /// Wraps precomputed labels. Every id below the maximum must be used.
    pub fn from_labels(width: u32, height: u32, labels: Vec<u32>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if labels.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: labels.len(),
            });
        }
        let count = labels.iter().max().map_or(0, |&m| m + 1);
        let mut used = vec![false; count as usize];
        for &l in &labels {
            used[l as usize] = true;
        }
        if let Some(missing) = used.iter().position(|&u| !u) {
            return Err(Error::InvalidInput(format!("superpixel id {missing} has no pixels")));
        }
        Ok(SuperpixelLabeling {
            width,
            height,
            labels,
            count,
        })
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

    pub fn count(&self) -> usize {
        self.count as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.count()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Pixel indices of every superpixel.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut members = vec![Vec::new(); self.count()];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l as usize].push(i as u32);
        }
        members
    }

    /// Whether every superpixel forms a single 4-connected component.
    pub fn is_connected(&self) -> bool {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut seen = vec![false; self.labels.len()];
        let mut first_seen = vec![false; self.count()];
        let mut queue = VecDeque::new();
        for start in 0..self.labels.len() {
            if seen[start] {
                continue;
            }
            let label = self.labels[start];
            if std::mem::replace(&mut first_seen[label as usize], true) {
                return false;
            }
            seen[start] = true;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                for q in neighbors4(p, w, h) {
                    if !seen[q] && self.labels[q] == label {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        true
    }

    /// Persists the labeling as a 16-bit grayscale PNG plus a JSON sidecar.
    pub fn save_cache(&self, png_path: &Path, key: &CacheKey) -> Result<()> {
        if self.count > u32::from(u16::MAX) + 1 {
            return Err(Error::InvalidInput(format!(
                "{} superpixels do not fit a 16-bit PNG",
                self.count
            )));
        }
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_vec(self.width, self.height, self.labels.iter().map(|&l| l as u16).collect())
                .expect("buffer sized from dimensions");
        buf.save(png_path)?;
        let meta = CacheSidecar {
            width: self.width,
            height: self.height,
            count: self.count,
            key: key.clone(),
        };
        let sidecar = sidecar_path(png_path);
        let json = serde_json::to_string_pretty(&meta).expect("plain data");
        std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
    }

    /// Loads a cached labeling; `Ok(None)` when absent or keyed differently.
    pub fn load_cache(png_path: &Path, key: &CacheKey) -> Result<Option<Self>> {
        let sidecar = sidecar_path(png_path);
        if !png_path.is_file() || !sidecar.is_file() {
            return Ok(None);
        }
        let meta: CacheSidecar = crate::dataset::parse_json_file(&sidecar)?;
        if &meta.key != key {
            return Ok(None);
        }
        let img = image::open(png_path)?.into_luma16();
        let labeling = SuperpixelLabeling::from_labels(
            img.width(),
            img.height(),
            img.into_raw().into_iter().map(u32::from).collect(),
        )?;
        if labeling.count != meta.count || labeling.dims() != (meta.width, meta.height) {
            return Err(Error::malformed(&sidecar, "sidecar disagrees with label image"));
        }
        Ok(Some(labeling))
    }
}

fn sidecar_path(png_path: &Path) -> std::path::PathBuf {
    png_path.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub image_sha256: String,
    pub target_count: usize,
    pub iterations: usize,
    pub max_side: Option<u32>,
}

impl CacheKey {
    pub fn new(image: &RgbImage, params: &SlicParams) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(image.width().to_le_bytes());
        hasher.update(image.height().to_le_bytes());
        hasher.update(image.as_raw());
        CacheKey {
            image_sha256: hex::encode(hasher.finalize()),
            target_count: params.target_count,
            iterations: params.iterations,
            max_side: params.max_side,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    width: u32,
    height: u32,
    count: u32,
    key: CacheKey,
}

fn neighbors4(p: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % w, p / w);
    let left = (x > 0).then(|| p - 1);
    let right = (x + 1 < w).then(|| p + 1);
    let up = (y > 0).then(|| p - w);
    let down = (y + 1 < h).then(|| p + w);
    [left, right, up, down].into_iter().flatten()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicParams {
    pub target_count: usize,
    pub iterations: usize,
    /// Images whose longer side exceeds this are clustered on a downscaled
    /// copy and the labels upsampled by nearest neighbor.
    pub max_side: Option<u32>,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            target_count: 4000,
            iterations: 10,
            max_side: Some(512),
        }
    }
}

/// SLIC0 with the downscale policy of `params`.
pub fn segment(image: &RgbImage, params: &SlicParams) -> Result<SuperpixelLabeling> {
    let (w, h) = image.dimensions();
    match params.max_side {
        Some(side) if w.max(h) > side => {
            let scale = f64::from(side) / f64::from(w.max(h));
            let sw = ((f64::from(w) * scale).round() as u32).clamp(1, side);
            let sh = ((f64::from(h) * scale).round() as u32).clamp(1, side);
            let small = imageops::resize(image, sw, sh, FilterType::Triangle);
            let coarse = slic0(&small, params.target_count, params.iterations)?;
            Ok(upsample_nearest(&coarse, w, h))
        }
        _ => slic0(image, params.target_count, params.iterations),
    }
}

fn upsample_nearest(coarse: &SuperpixelLabeling, width: u32, height: u32) -> SuperpixelLabeling {
    let (cw, ch) = (coarse.width as u64, coarse.height as u64);
    let src_x: Vec<u32> = (0..width as u64)
        .map(|x| (((2 * x + 1) * cw) / (2 * width as u64)).min(cw - 1) as u32)
        .collect();
    let mut labels = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height as u64 {
        let sy = (((2 * y + 1) * ch) / (2 * height as u64)).min(ch - 1) as u32;
        labels.extend(src_x.iter().map(|&sx| coarse.label(sx, sy)));
    }
    SuperpixelLabeling {
        width,
        height,
        labels,
        count: coarse.count,
    }
}

/// Grid dimensions `(nx, ny)` with `nx * ny` close to `target` and cells
/// close to square.
fn seed_grid(width: u32, height: u32, target: usize) -> (usize, usize) {
    let (w, h) = (width as usize, height as usize);
    let t = target as f64;
    let mut nx = ((t * w as f64 / h as f64).sqrt().round() as usize).clamp(1, w);
    let ny = ((t / nx as f64).round() as usize).clamp(1, h);
    if ny == h || ny == 1 {
        nx = ((t / ny as f64).round() as usize).clamp(1, w);
    }
    (nx, ny)
}

#[derive(Debug, Clone, Copy)]
struct Cluster {
    l: f64,
    a: f64,
    b: f64,
    x: f64,
    y: f64,
}

/// Seed centers of the regular grid, in pixel-center coordinates, row-major.
pub fn grid_seeds(width: u32, height: u32, target: usize) -> Vec<(f64, f64)> {
    let (nx, ny) = seed_grid(width, height, target);
    let (sx, sy) = (f64::from(width) / nx as f64, f64::from(height) / ny as f64);
    let mut seeds = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            seeds.push(((i as f64 + 0.5) * sx, (j as f64 + 0.5) * sy));
        }
    }
    seeds
}

/// SLIC with adaptive per-cluster color normalization (SLIC0) at the
/// image's native resolution, followed by connectivity enforcement.
///
/// Seeds sit on a regular grid; pixel-to-cluster ties go to the lower
/// cluster id.
pub fn slic0(image: &RgbImage, target_count: usize, iterations: usize) -> Result<SuperpixelLabeling> {
    let (width, height) = image.dimensions();
    let n = width as usize * height as usize;
    if n == 0 {
        return Err(Error::InvalidInput("image is empty".into()));
    }
    if target_count == 0 {
        return Err(Error::InvalidInput("target superpixel count must be at least 1".into()));
    }
    if target_count > n {
        return Err(Error::TargetTooLarge {
            target: target_count,
            pixels: n,
        });
    }
    let (w, h) = (width as usize, height as usize);
    let lab: Vec<[f64; 3]> = image.pixels().map(|p| srgb_to_lab(p.0)).collect();

    let (nx, ny) = seed_grid(width, height, target_count);
    let (step_x, step_y) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let spatial_norm = step_x * step_y;
    let mut clusters: Vec<Cluster> = grid_seeds(width, height, target_count)
        .into_iter()
        .map(|(x, y)| {
            let px = (x.floor() as usize).min(w - 1);
            let py = (y.floor() as usize).min(h - 1);
            let [l, a, b] = lab[py * w + px];
            Cluster { l, a, b, x, y }
        })
        .collect();
    let k = clusters.len();

    let mut labels: Vec<u32> = (0..n)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let i = ((x * nx) / w).min(nx - 1);
            let j = ((y * ny) / h).min(ny - 1);
            (j * nx + i) as u32
        })
        .collect();
    // Squared color distance normalizers, one per cluster.
    let mut max_color = vec![100.0f64; k];
    let mut best = vec![f64::INFINITY; n];
    let mut color_dist = vec![0.0f64; n];

    for _ in 0..iterations {
        best.fill(f64::INFINITY);
        for (ci, c) in clusters.iter().enumerate() {
            let x0 = (c.x - step_x).floor().max(0.0) as usize;
            let x1 = ((c.x + step_x).ceil() as usize).min(w);
            let y0 = (c.y - step_y).floor().max(0.0) as usize;
            let y1 = ((c.y + step_y).ceil() as usize).min(h);
            let norm = max_color[ci].max(1e-12);
            for y in y0..y1 {
                let dy = y as f64 + 0.5 - c.y;
                for x in x0..x1 {
                    let dx = x as f64 + 0.5 - c.x;
                    let p = y * w + x;
                    let [l, a, b] = lab[p];
                    let dc = (l - c.l).powi(2) + (a - c.a).powi(2) + (b - c.b).powi(2);
                    let d = dc / norm + (dx * dx + dy * dy) / spatial_norm;
                    if d < best[p] {
                        best[p] = d;
                        labels[p] = ci as u32;
                        color_dist[p] = dc;
                    }
                }
            }
        }

        let mut sums = vec![[0.0f64; 6]; k];
        let mut new_max = vec![0.0f64; k];
        for p in 0..n {
            if !best[p].is_finite() {
                continue;
            }
            let ci = labels[p] as usize;
            let [l, a, b] = lab[p];
            let s = &mut sums[ci];
            s[0] += l;
            s[1] += a;
            s[2] += b;
            s[3] += (p % w) as f64 + 0.5;
            s[4] += (p / w) as f64 + 0.5;
            s[5] += 1.0;
            new_max[ci] = new_max[ci].max(color_dist[p]);
        }
        for (ci, s) in sums.iter().enumerate() {
            if s[5] > 0.0 {
                clusters[ci] = Cluster {
                    l: s[0] / s[5],
                    a: s[1] / s[5],
                    b: s[2] / s[5],
                    x: s[3] / s[5],
                    y: s[4] / s[5],
                };
                max_color[ci] = new_max[ci];
            }
        }
    }

    let min_size = (n / k) / 4;
    let (labels, count) = enforce_connectivity(&labels, w, h, min_size);
    Ok(SuperpixelLabeling {
        width,
        height,
        labels,
        count,
    })
}

/// Relabels every 4-connected component in raster order of its first pixel.
/// Components of at most `min_size` pixels join the component to the left of
/// or above their first pixel, which keeps the merged region connected.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> (Vec<u32>, u32) {
    const UNSET: u32 = u32::MAX;
    let mut out = vec![UNSET; labels.len()];
    let mut next = 0u32;
    let mut component = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if out[start] != UNSET {
            continue;
        }
        let (x, y) = (start % w, start / w);
        let adjacent = [(x > 0).then(|| start - 1), (y > 0).then(|| start - w)]
            .into_iter()
            .flatten()
            .map(|q| out[q])
            .find(|&l| l != UNSET);

        let old = labels[start];
        component.clear();
        out[start] = next;
        component.push(start);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbors4(p, w, h) {
                if out[q] == UNSET && labels[q] == old {
                    out[q] = next;
                    component.push(q);
                    queue.push_back(q);
                }
            }
        }
        match adjacent {
            Some(target) if component.len() <= min_size => {
                for &p in &component {
                    out[p] = target;
                }
            }
            _ => next += 1,
        }
    }
    (out, next)
}

/// sRGB (D65) to CIELAB.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    fn linear(c: u8) -> f64 {
        let c = f64::from(c) / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        const EPS: f64 = 216.0 / 24389.0;
        const KAPPA: f64 = 24389.0 / 27.0;
        if t > EPS {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    }
    let (r, g, b) = (linear(rgb[0]), linear(rgb[1]), linear(rgb[2]));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Superpixels as nodes, 4-neighbor contacts as undirected edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelGraph {
    pixel_counts: Vec<usize>,
    edges: BTreeSet<(u32, u32)>,
    neighbors: Vec<Vec<u32>>,
}

impl SuperpixelGraph {
    pub fn node_count(&self) -> usize {
        self.pixel_counts.len()
    }

    pub fn pixel_counts(&self) -> &[usize] {
        &self.pixel_counts
    }

    /// Edges as `(low, high)` id pairs.
    pub fn edges(&self) -> &BTreeSet<(u32, u32)> {
        &self.edges
    }

    /// Sorted neighbor ids of `node`.
    pub fn neighbors(&self, node: u32) -> &[u32] {
        &self.neighbors[node as usize]
    }

    pub fn largest_node(&self) -> usize {
        self.pixel_counts.iter().copied().max().unwrap_or(0)
    }
}

pub fn adjacency(labeling: &SuperpixelLabeling) -> SuperpixelGraph {
    let (w, h) = (labeling.width as usize, labeling.height as usize);
    let mut edges = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = labeling.labels[y * w + x];
            if x + 1 < w {
                let b = labeling.labels[y * w + x + 1];
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            if y + 1 < h {
                let b = labeling.labels[(y + 1) * w + x];
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    let mut neighbors = vec![Vec::new(); labeling.count()];
    for &(a, b) in &edges {
        neighbors[a as usize].push(b);
        neighbors[b as usize].push(a);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    SuperpixelGraph {
        pixel_counts: labeling.pixel_counts(),
        edges,
        neighbors,
    }
}

/// A node is 1 when strictly more than half of its pixels are set.
pub fn project_mask(mask: &BinaryMask, labeling: &SuperpixelLabeling) -> Result<Vec<bool>> {
    if mask.dims() != labeling.dims() {
        return Err(Error::DimensionMismatch {
            left: mask.dims(),
            right: labeling.dims(),
        });
    }
    let mut set = vec![0usize; labeling.count()];
    let mut total = vec![0usize; labeling.count()];
    for (&bit, &l) in mask.bits().iter().zip(&labeling.labels) {
        total[l as usize] += 1;
        if bit {
            set[l as usize] += 1;
        }
    }
    Ok(set.iter().zip(&total).map(|(&s, &t)| 2 * s > t).collect())
}
