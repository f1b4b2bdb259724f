//! Points of the circle ℝ/ℤ.

use serde::{Deserialize, Serialize};

/// A point of the circle, stored as its representative in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct CirclePoint(f64);

impl CirclePoint {
    pub const ZERO: CirclePoint = CirclePoint(0.0);

    /// Reduces `value` mod 1.
    pub fn new(value: f64) -> Self {
        CirclePoint(wrap(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Geodesic distance `min(|x − y|, 1 − |x − y|)`.
    pub fn distance(self, other: CirclePoint) -> f64 {
        circle_distance(self.0, other.0)
    }

    pub fn shifted(self, delta: f64) -> Self {
        CirclePoint::new(self.0 + delta)
    }
}

impl From<f64> for CirclePoint {
    fn from(value: f64) -> Self {
        CirclePoint::new(value)
    }
}

impl From<CirclePoint> for f64 {
    fn from(p: CirclePoint) -> f64 {
        p.0
    }
}

/// `value mod 1` in `[0, 1)`.
#[inline]
pub fn wrap(value: f64) -> f64 {
    let r = value.rem_euclid(1.0);
    // rem_euclid of a tiny negative number rounds up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Circle distance between two reals taken mod 1.
#[inline]
pub fn circle_distance(x: f64, y: f64) -> f64 {
    let d = wrap(x - y);
    d.min(1.0 - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_unit_interval() {
        assert_eq!(wrap(-1e-20), 0.0);
        assert_eq!(wrap(1.0), 0.0);
        assert!((wrap(-0.25) - 0.75).abs() < 1e-16);
        assert!((wrap(3.5) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn distance_is_symmetric_and_short_way_round() {
        let a = CirclePoint::new(0.05);
        let b = CirclePoint::new(0.95);
        assert!((a.distance(b) - 0.1).abs() < 1e-15);
        assert!((b.distance(a) - 0.1).abs() < 1e-15);
        assert_eq!(a.distance(a), 0.0);
    }
}
