//! Axis-aligned box geometry shared by annotations, tracking, and evaluation.
//!
//! Boxes live in real-valued pixel coordinates and are stored as an
//! upper-left corner `(x1, y1)` and a lower-right corner `(x2, y2)`.
//! Degenerate boxes (zero width or height) are allowed; inverted corners are
//! not. All overlap math is closed-form on the real-valued rectangles — no
//! pixel discretization is involved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from box construction.
#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// The corners do not describe an upper-left/lower-right pair.
    #[error("invalid box corners: ({x1}, {y1})..({x2}, {y2}) (need x1 <= x2 and y1 <= y2)")]
    InvalidCorners { x1: f64, y1: f64, x2: f64, y2: f64 },
    /// A coordinate was NaN or infinite.
    #[error("non-finite box coordinate: ({x1}, {y1})..({x2}, {y2})")]
    NonFinite { x1: f64, y1: f64, x2: f64, y2: f64 },
}

/// Axis-aligned rectangle in pixel coordinates.
///
/// The invariant `x1 <= x2 && y1 <= y2` is established at construction and
/// preserved by every method that returns a box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    /// Builds a box from corners, rejecting non-finite or inverted input.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(GeometryError::NonFinite { x1, y1, x2, y2 });
        }
        if x2 < x1 || y2 < y1 {
            return Err(GeometryError::InvalidCorners { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from a center point and a width/height pair.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Center of the box as `(cx, cy)`.
    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Scale statistic `sqrt(w * h)`: the side of the equal-area square, in
    /// pixels. Used for size histograms and size-change attribute rules.
    pub fn scale(&self) -> f64 {
        (self.width() * self.height()).sqrt()
    }

    /// Area of the overlap with `other` (zero when disjoint).
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Clamps the box to the image rectangle `[0, w] x [0, h]`, preserving
    /// corner ordering.
    pub fn clip_to(&self, img_w: f64, img_h: f64) -> BoundingBox {
        let x1 = self.x1.clamp(0.0, img_w);
        let y1 = self.y1.clamp(0.0, img_h);
        let x2 = self.x2.clamp(x1, img_w);
        let y2 = self.y2.clamp(y1, img_h);
        BoundingBox { x1, y1, x2, y2 }
    }
}

/// Intersection-over-union of two boxes.
///
/// Degenerate geometry is well-defined: an empty union yields 0 rather than
/// NaN, and disjoint boxes yield exactly 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Euclidean distance between the centers of two boxes, in pixels.
pub fn center_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Scale statistic `sqrt(w * h)` of a box (free-function form of
/// [`BoundingBox::scale`]).
pub fn scale(b: &BoundingBox) -> f64 {
    b.scale()
}
