//! Points, landmark sets and the closed-polygon predicates shared by the
//! rasterizer, the distance transform and the SM feature.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        math::hypot(self.x - other.x, self.y - other.y)
    }
}

/// An ordered closed contour of `M >= 3` landmarks. The last point connects
/// back to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::DegenerateShape(points.len()));
        }
        Ok(Self { points })
    }

    /// Builds a set from an interleaved `(x1, y1, ..., xM, yM)` vector.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch {
                expected: v.len() + 1,
                found: v.len(),
            });
        }
        Self::new(v.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n, sy / n)
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Closed-polygon edges `(p_i, p_{i+1 mod M})`.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }
}

/// x coordinate where edge `a-b` crosses the horizontal line at `y`, using
/// the half-open rule so that each vertex is counted once.
#[inline]
pub(crate) fn crossing_x(a: Point, b: Point, y: f64) -> Option<f64> {
    if (a.y > y) != (b.y > y) {
        Some(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y))
    } else {
        None
    }
}

/// Even-odd point-in-polygon test (ray towards +x).
pub fn point_in_polygon(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        if let Some(xc) = crossing_x(poly[i], poly[(i + 1) % n], p.y) {
            if p.x < xc {
                inside = !inside;
            }
        }
    }
    inside
}

/// Squared distance from `p` to the segment `a-b`. Exactly zero for points
/// on the segment.
#[inline]
pub fn segment_distance_sq(p: Point, a: Point, b: Point) -> f64 {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let (qx, qy) = (p.x - a.x, p.y - a.y);
    let cross = ex * qy - ey * qx;
    if cross == 0.0 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y) {
        return 0.0;
    }
    let len2 = ex * ex + ey * ey;
    let t = if len2 > 0.0 {
        ((qx * ex + qy * ey) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (rx, ry) = (qx - t * ex, qy - t * ey);
    rx * rx + ry * ry
}

/// Euclidean distance from `p` to the segment `a-b`.
#[inline]
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    math::sqrt(segment_distance_sq(p, a, b))
}

/// Unsigned distance from `p` to the closed polyline.
pub fn boundary_distance(poly: &[Point], p: Point) -> f64 {
    let n = poly.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let d = segment_distance_sq(p, poly[i], poly[(i + 1) % n]);
        if d < best {
            best = d;
        }
    }
    math::sqrt(best)
}

/// Signed distance to the closed polygon: positive inside, negative outside,
/// zero on the boundary.
pub fn signed_distance(poly: &[Point], p: Point) -> f64 {
    let d = boundary_distance(poly, p);
    if d == 0.0 {
        0.0
    } else if point_in_polygon(poly, p) {
        d
    } else {
        -d
    }
}

/// Shoelace area (absolute value) of a closed polygon.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        acc += a.x * b.y - b.x * a.y;
    }
    (acc * 0.5).abs()
}

/// Rotation by `deg` degrees in pixel coordinates: `(x, y) -> (c x - s y, s x + c y)`.
#[inline]
pub fn rotate(p: Point, sin: f64, cos: f64) -> Point {
    Point::new(cos * p.x - sin * p.y, sin * p.x + cos * p.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn square() -> Vec<Point> {
        vec![
            Point::new(1.0, 1.0),
            Point::new(5.0, 1.0),
            Point::new(5.0, 5.0),
            Point::new(1.0, 5.0),
        ]
    }

    #[test]
    fn segment_distance_on_edge_is_zero() {
        let d = segment_distance(Point::new(2.5, 1.0), Point::new(1.0, 1.0), Point::new(5.0, 1.0));
        assert_eq!(d, 0.0);
    }

    #[test]
    fn segment_distance_clamps_to_endpoints() {
        let d = segment_distance(Point::new(8.0, 5.0), Point::new(1.0, 1.0), Point::new(5.0, 1.0));
        assert!((d - 5.0).abs() < 1e-15);
    }

    #[test]
    fn square_inside_outside() {
        let sq = square();
        assert!(point_in_polygon(&sq, Point::new(3.0, 3.0)));
        assert!(!point_in_polygon(&sq, Point::new(6.0, 3.0)));
        assert_eq!(signed_distance(&sq, Point::new(3.0, 3.0)), 2.0);
        assert_eq!(signed_distance(&sq, Point::new(7.0, 3.0)), -2.0);
    }

    #[test]
    fn shoelace_area() {
        assert_eq!(polygon_area(&square()), 16.0);
        let flat = [Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)];
        assert_eq!(polygon_area(&flat), 0.0);
    }

    #[test]
    fn landmark_set_rejects_two_points() {
        let r = LandmarkSet::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]);
        assert_eq!(r, Err(Error::DegenerateShape(2)));
    }
}
