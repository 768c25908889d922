use serde::{Deserialize, Serialize};

use super::{GeometryError, GEOM_TOL};
use crate::Point;

/// Where a half-space came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    /// Linearized collision constraint of scenario `index` of obstacle `obstacle`.
    Scenario { obstacle: usize, index: usize },
    /// One side of the workspace box: 0 = +x, 1 = +y, 2 = -x, 3 = -y.
    Workspace(usize),
}

impl Origin {
    pub fn is_scenario(&self) -> bool {
        matches!(self, Origin::Scenario { .. })
    }
}

/// Closed half-plane `{x : normal . x <= offset}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Point,
    pub offset: f64,
    pub origin: Origin,
}

impl HalfSpace {
    /// Normalizes `normal` (and scales `offset` with it).
    pub fn new(normal: Point, offset: f64, origin: Origin) -> Self {
        let n = normal.norm();
        assert!(n > 0.0, "half-space normal must be nonzero");
        Self {
            normal: normal / n,
            offset: offset / n,
            origin,
        }
    }

    /// `normal . p - offset`; positive means `p` is outside.
    pub fn violation(&self, p: &Point) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Distance from `p` to the boundary, positive on the feasible side.
    pub fn clearance(&self, p: &Point) -> f64 {
        -self.violation(p)
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        self.violation(p) <= tol
    }
}

/// Linearizes the disc constraint `||x - delta|| >= r` about `x_hat`:
/// the boundary is tangent to the disc of radius `r` around `delta` on the
/// side facing `x_hat`.
pub fn build_halfspace(
    delta: &Point,
    x_hat: &Point,
    r: f64,
    origin: Origin,
) -> Result<HalfSpace, GeometryError> {
    let diff = delta - x_hat;
    let distance = diff.norm();
    if distance <= GEOM_TOL {
        return Err(GeometryError::Degenerate { distance });
    }
    let normal = diff / distance;
    Ok(HalfSpace {
        normal,
        offset: normal.dot(delta) - r,
        origin,
    })
}

/// Axis-aligned rectangle bounding every free-space polygon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox {
    pub min: Point,
    pub max: Point,
}

impl WorkspaceBox {
    pub fn new(min: Point, max: Point) -> Self {
        assert!(min.x < max.x && min.y < max.y, "empty workspace box");
        Self { min, max }
    }

    pub fn centered(center: Point, side: f64) -> Self {
        let h = Point::new(side / 2.0, side / 2.0);
        Self::new(center - h, center + h)
    }

    pub fn halfspaces(&self) -> [HalfSpace; 4] {
        [
            HalfSpace { normal: Point::new(1.0, 0.0), offset: self.max.x, origin: Origin::Workspace(0) },
            HalfSpace { normal: Point::new(0.0, 1.0), offset: self.max.y, origin: Origin::Workspace(1) },
            HalfSpace { normal: Point::new(-1.0, 0.0), offset: -self.min.x, origin: Origin::Workspace(2) },
            HalfSpace { normal: Point::new(0.0, -1.0), offset: -self.min.y, origin: Origin::Workspace(3) },
        ]
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        p.x >= self.min.x - tol && p.x <= self.max.x + tol && p.y >= self.min.y - tol && p.y <= self.max.y + tol
    }
}
