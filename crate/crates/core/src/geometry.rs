//! Integer bounding boxes, intersection-over-union and the aspect-ratio gate.

use std::fmt;

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle with a strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BBox {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::Input(format!("box {x},{y},{w},{h} has an empty extent")));
        }
        if x.checked_add(w).is_none() || y.checked_add(h).is_none() {
            return Err(Error::Input(format!("box {x},{y},{w},{h} overflows u32")));
        }
        Ok(Self { x, y, w, h })
    }

    /// Smallest box covering the inclusive pixel range `[x0, x1] x [y0, y1]`.
    pub fn from_corners(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x1 >= x0 && y1 >= y0);
        Self {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        }
    }

    #[inline]
    pub fn x(&self) -> u32 {
        self.x
    }
    #[inline]
    pub fn y(&self) -> u32 {
        self.y
    }
    #[inline]
    pub fn w(&self) -> u32 {
        self.w
    }
    #[inline]
    pub fn h(&self) -> u32 {
        self.h
    }
    /// Exclusive right edge.
    #[inline]
    pub fn right(&self) -> u32 {
        self.x + self.w
    }
    /// Exclusive bottom edge.
    #[inline]
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Height over width.
    pub fn aspect(&self) -> f64 {
        self.h as f64 / self.w as f64
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            return 0;
        }
        (x1 - x0) as u64 * (y1 - y0) as u64
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0
    }

    /// Smallest box containing both.
    pub fn union_box(&self, other: &BBox) -> BBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.w, self.h)
    }
}

/// Intersection over union. Areas are exact integers; the only rounding is
/// the final division.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Admits candidates whose height/width ratio is within a relative
/// `tolerance` of the query's ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectGate {
    tolerance: f64,
}

impl AspectGate {
    pub const DEFAULT_TOLERANCE: f64 = 0.25;

    pub fn new(tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0 && tolerance < 1.0) {
            return Err(Error::Param(format!(
                "aspect tolerance must lie in (0, 1), got {tolerance}"
            )));
        }
        Ok(Self { tolerance })
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Inclusive at both ends of `[r(1 - tol), r(1 + tol)]`.
    pub fn admits(&self, query: &BBox, cand: &BBox) -> bool {
        // (h_c w_q) / (h_q w_c) is the candidate ratio relative to the query;
        // both products are exact, so uniformly scaled boxes round identically.
        let rel = (cand.h as f64 * query.w as f64) / (query.h as f64 * cand.w as f64);
        rel >= 1.0 - self.tolerance && rel <= 1.0 + self.tolerance
    }
}

impl Default for AspectGate {
    fn default() -> Self {
        Self {
            tolerance: Self::DEFAULT_TOLERANCE,
        }
    }
}

pub fn aspect_gate(query: &BBox, cand: &BBox, gate: &AspectGate) -> bool {
    gate.admits(query, cand)
}
