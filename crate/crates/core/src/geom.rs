//! Small planar helpers shared by the geometric modules.

use crate::error::{Error, Result};

/// A real point or vector in the (ξ₁, ξ₂) plane.
pub type P2 = [f64; 2];

/// Axis-aligned real rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Window {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) || ![x0, x1, y0, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::Precondition(format!(
                "empty or non-finite window [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    /// Square window `[-h, h]²`.
    pub fn square(h: f64) -> Self {
        Self {
            x0: -h,
            x1: h,
            y0: -h,
            y1: h,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, p: P2) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    /// Grows the window by `m` on every side.
    pub fn expand(&self, m: f64) -> Self {
        Self {
            x0: self.x0 - m,
            x1: self.x1 + m,
            y0: self.y0 - m,
            y1: self.y1 + m,
        }
    }

    /// Smallest window containing all points (degenerate extents are allowed).
    pub fn bounding(points: &[P2]) -> Option<Self> {
        let first = points.first()?;
        let mut w = Self {
            x0: first[0],
            x1: first[0],
            y0: first[1],
            y1: first[1],
        };
        for p in points {
            w.x0 = w.x0.min(p[0]);
            w.x1 = w.x1.max(p[0]);
            w.y0 = w.y0.min(p[1]);
            w.y1 = w.y1.max(p[1]);
        }
        Some(w)
    }

    /// Euclidean distance from `p` to the rectangle (zero inside).
    pub fn distance(&self, p: P2) -> f64 {
        let dx = (self.x0 - p[0]).max(p[0] - self.x1).max(0.0);
        let dy = (self.y0 - p[1]).max(p[1] - self.y1).max(0.0);
        dx.hypot(dy)
    }
}

pub fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: P2) -> f64 {
    a[0].hypot(a[1])
}

pub fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn scale(a: P2, s: f64) -> P2 {
    [a[0] * s, a[1] * s]
}

/// Sign with a dead zone: `0` when `|v| <= tol`.
pub fn sign_tol(v: f64, tol: f64) -> i8 {
    if v > tol {
        1
    } else if v < -tol {
        -1
    } else {
        0
    }
}
