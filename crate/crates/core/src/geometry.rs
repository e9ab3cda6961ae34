//! Planar primitives in pixel coordinates. The pixel at column `x`, row `y`
//! has its center at `(x + 0.5, y + 0.5)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn pixel_center(x: u32, y: u32) -> Self {
        Point::new(f64::from(x) + 0.5, f64::from(y) + 0.5)
    }
}

/// A closed ring of vertices. Serialized as a flat `[x1, y1, x2, y2, ...]`
/// array, the COCO polygon layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon(pub Vec<Point>);

impl Polygon {
    pub fn vertices(&self) -> &[Point] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Axis-aligned rectangle from its top-left corner and size.
    pub fn rect(x: f64, y: f64, width: f64, height: f64) -> Self {
        Polygon(vec![
            Point::new(x, y),
            Point::new(x + width, y),
            Point::new(x + width, y + height),
            Point::new(x, y + height),
        ])
    }

    pub fn from_flat(coords: &[f64]) -> Option<Self> {
        if !coords.len().is_multiple_of(2) {
            return None;
        }
        Some(Polygon(
            coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect(),
        ))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn contains(&self, p: Point) -> bool {
        polygon_contains(&self.0, p)
    }

    /// `(min_x, min_y, max_x, max_y)`; `None` for an empty polygon.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.0.first()?;
        Some(
            self.0
                .iter()
                .fold((first.x, first.y, first.x, first.y), |(x0, y0, x1, y1), p| {
                    (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y))
                }),
        )
    }

    /// Whether every vertex lies in the closed rectangle `[0, width] x [0, height]`.
    pub fn within(&self, width: u32, height: u32) -> bool {
        let (w, h) = (f64::from(width), f64::from(height));
        self.0
            .iter()
            .all(|p| p.x.is_finite() && p.y.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h)
    }

    /// Four vertices, or an axis-aligned rectangle.
    pub fn is_quadrilateral(&self) -> bool {
        self.0.len() == 4
    }
}

impl Serialize for Polygon {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_flat().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Polygon {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let flat = Vec::<f64>::deserialize(deserializer)?;
        Polygon::from_flat(&flat).ok_or_else(|| serde::de::Error::custom("polygon needs an even number of coordinates"))
    }
}

/// Cross product of `(a - o) x (b - o)`.
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Even-odd crossing test with half-open edge spans.
///
/// Offsets are taken relative to the edge start before the intersection is
/// computed, which keeps the result invariant under integer translation.
pub fn polygon_contains(vertices: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = vertices.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_offset = (b.x - a.x) * (p.y - a.y) / (b.y - a.y);
            if p.x - a.x < x_offset {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Convex hull by Andrew's monotone chain, counter-clockwise in a y-up frame,
/// collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Closed containment test for a hull produced by [`convex_hull`]. Points on
/// the boundary count as inside. Degenerate hulls (a point or a segment)
/// contain exactly the points lying on them.
pub fn hull_contains(hull: &[Point], p: Point) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            cross(a, b, p) == 0.0
                && p.x >= a.x.min(b.x)
                && p.x <= a.x.max(b.x)
                && p.y >= a.y.min(b.y)
                && p.y <= a.y.max(b.y)
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(coords: &[(f64, f64)]) -> Vec<Point> {
        coords.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn square_contains_center_not_outside() {
        let sq = pts(&[(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]);
        assert!(polygon_contains(&sq, Point::new(1.0, 1.0)));
        assert!(!polygon_contains(&sq, Point::new(2.5, 1.0)));
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let hull = convex_hull(&pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]));
        assert_eq!(hull.len(), 4);
        assert!(hull_contains(&hull, Point::new(2.0, 1.0)));
        assert!(!hull_contains(&hull, Point::new(2.1, 1.0)));
    }

    #[test]
    fn degenerate_hulls() {
        let seg = convex_hull(&pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]));
        assert_eq!(seg.len(), 2);
        assert!(hull_contains(&seg, Point::new(1.5, 1.5)));
        assert!(!hull_contains(&seg, Point::new(1.5, 1.0)));
        assert!(convex_hull(&[]).is_empty());
    }
}
