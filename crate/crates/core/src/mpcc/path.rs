use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("reference path needs at least 2 waypoints, got {0}")]
    TooShort(usize),
    #[error("waypoints {0} and {} coincide", .0 + 1)]
    Repeated(usize),
}

/// Polyline parameterized by arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    waypoints: Vec<Point>,
    arc: Vec<f64>,
}

/// Step of the central difference used for tangents (m).
const TANGENT_STEP: f64 = 1e-3;

impl ReferencePath {
    pub fn new(waypoints: Vec<Point>) -> Result<Self, PathError> {
        if waypoints.len() < 2 {
            return Err(PathError::TooShort(waypoints.len()));
        }
        let mut arc = Vec::with_capacity(waypoints.len());
        arc.push(0.0);
        for (i, w) in waypoints.windows(2).enumerate() {
            let len = (w[1] - w[0]).norm();
            if len <= 1e-12 {
                return Err(PathError::Repeated(i));
            }
            arc.push(arc[i] + len);
        }
        Ok(Self { waypoints, arc })
    }

    pub fn straight(from: Point, to: Point) -> Result<Self, PathError> {
        Self::new(vec![from, to])
    }

    pub fn waypoints(&self) -> &[Point] {
        &self.waypoints
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    /// Linear interpolation, extrapolating along the end segments.
    pub fn point_at(&self, s: f64) -> Point {
        let seg = match self.arc.partition_point(|&a| a <= s) {
            0 => 0,
            i => (i - 1).min(self.waypoints.len() - 2),
        };
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        let len = self.arc[seg + 1] - self.arc[seg];
        a + (b - a) * ((s - self.arc[seg]) / len)
    }

    /// Unit tangent by central difference of `point_at`.
    pub fn tangent_at(&self, s: f64) -> Point {
        let d = self.point_at(s + TANGENT_STEP) - self.point_at(s - TANGENT_STEP);
        d / d.norm()
    }

    /// Arc length of the closest point, searched over all segments.
    pub fn project(&self, p: &Point) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.waypoints.len() - 1 {
            let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
            let len = self.arc[i + 1] - self.arc[i];
            let t = ((p - a).dot(&(b - a)) / (len * len)).clamp(0.0, 1.0);
            let d = (a + (b - a) * t - p).norm_squared();
            if d < best.0 {
                best = (d, self.arc[i] + t * len);
            }
        }
        best.1
    }
}
