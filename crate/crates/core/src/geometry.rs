//! Planar primitives in image coordinates (y grows downward).

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// Axis-aligned box given by two opposite corners. The first corner is the
/// box's anchor: distances to a buzzer are always measured to it, so corner
/// order matters and is preserved as given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub corners: [Point; 2],
}

impl Rect {
    pub const fn new(anchor: Point, opposite: Point) -> Self {
        Self {
            corners: [anchor, opposite],
        }
    }

    pub fn anchor(&self) -> Point {
        self.corners[0]
    }

    pub fn min(&self) -> Point {
        Point::new(
            self.corners[0].x.min(self.corners[1].x),
            self.corners[0].y.min(self.corners[1].y),
        )
    }

    pub fn max(&self) -> Point {
        Point::new(
            self.corners[0].x.max(self.corners[1].x),
            self.corners[0].y.max(self.corners[1].y),
        )
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point) -> bool {
        let (lo, hi) = (self.min(), self.max());
        lo.x <= p.x && p.x <= hi.x && lo.y <= p.y && p.y <= hi.y
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        let (a0, a1) = (self.min(), self.max());
        let (b0, b1) = (other.min(), other.max());
        a0.x <= b1.x && b0.x <= a1.x && a0.y <= b1.y && b0.y <= a1.y
    }

    pub fn center(&self) -> Point {
        (self.corners[0] + self.corners[1]) * 0.5
    }
}
