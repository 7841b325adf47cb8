//! Planar primitives shared by every other module: points, axis-aligned
//! boxes, normalized homogeneous lines, IoU and line intersection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Default determinant cutoff below which two normalized lines are treated
/// as parallel.
pub const PARALLEL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("cannot fit a line: all points coincident")]
    CoincidentPoints,
    #[error("a line needs at least two points, got {0}")]
    TooFewPoints(usize),
}

/// A point in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2<R> {
    pub x: R,
    pub y: R,
}

impl<R: Real> Point2<R> {
    pub fn new(x: R, y: R) -> Self {
        Point2 { x, y }
    }

    pub fn dist(&self, other: &Point2<R>) -> R {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned box stored as (left, top, width, height) in continuous
/// pixel coordinates. Degenerate boxes (zero width or height) are legal
/// and have zero area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<R> {
    pub x: R,
    pub y: R,
    pub w: R,
    pub h: R,
}

impl<R: Real> BBox<R> {
    pub fn new(x: R, y: R, w: R, h: R) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> R {
        self.w * self.h
    }

    /// Center of the box: (x + w/2, y + h/2).
    pub fn center(&self) -> Point2<R> {
        let half = R::of(0.5);
        Point2::new(self.x + self.w * half, self.y + self.h * half)
    }
}

/// Center of a box; free-function form of [`BBox::center`].
pub fn bbox_center<R: Real>(b: &BBox<R>) -> Point2<R> {
    b.center()
}

/// Intersection over union with open real-valued areas (no +1 pixel
/// convention). Returns 0 when the union area is 0.
pub fn iou<R: Real>(a: &BBox<R>, b: &BBox<R>) -> R {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= R::zero() || iy <= R::zero() {
        return R::zero();
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= R::zero() {
        R::zero()
    } else {
        inter / union
    }
}

/// Homogeneous line ax + by + c = 0 with a² + b² = 1. Represents vertical
/// lines exactly, unlike the slope/intercept form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2<R> {
    pub a: R,
    pub b: R,
    pub c: R,
}

impl<R: Real> Line2<R> {
    /// Builds a normalized line from raw coefficients.
    /// Panics if a = b = 0 (not a line).
    pub fn new(a: R, b: R, c: R) -> Self {
        let n = (a * a + b * b).sqrt();
        assert!(n > R::zero(), "degenerate line coefficients");
        Line2 {
            a: a / n,
            b: b / n,
            c: c / n,
        }
    }

    /// Line through two distinct points.
    pub fn through(p: &Point2<R>, q: &Point2<R>) -> Result<Self, GeometryError> {
        let a = q.y - p.y;
        let b = p.x - q.x;
        if a == R::zero() && b == R::zero() {
            return Err(GeometryError::CoincidentPoints);
        }
        let c = -(a * p.x + b * p.y);
        Ok(Line2::new(a, b, c))
    }

    /// Line through `point` with direction `(dx, dy)`.
    pub fn through_direction(point: &Point2<R>, dx: R, dy: R) -> Self {
        let a = -dy;
        let b = dx;
        let c = -(a * point.x + b * point.y);
        Line2::new(a, b, c)
    }

    /// Signed residual a·x + b·y + c; for a normalized line this is the
    /// signed Euclidean distance to the line.
    pub fn eval(&self, p: &Point2<R>) -> R {
        self.a * p.x + self.b * p.y + self.c
    }

    pub fn distance(&self, p: &Point2<R>) -> R {
        self.eval(p).abs()
    }

    /// Slope of the line (−a/b); infinite for vertical lines.
    pub fn slope(&self) -> R {
        -self.a / self.b
    }

    /// y-intercept (−c/b); infinite for vertical lines.
    pub fn intercept(&self) -> R {
        -self.c / self.b
    }
}

/// Unique intersection point of two normalized lines, or `None` when the
/// 2×2 determinant falls below `parallel_tol`.
pub fn line_intersection<R: Real>(
    l1: &Line2<R>,
    l2: &Line2<R>,
    parallel_tol: R,
) -> Option<Point2<R>> {
    let det = l1.a * l2.b - l2.a * l1.b;
    if det.abs() < parallel_tol {
        return None;
    }
    let x = (l1.b * l2.c - l2.b * l1.c) / det;
    let y = (l2.a * l1.c - l1.a * l2.c) / det;
    Some(Point2::new(x, y))
}
