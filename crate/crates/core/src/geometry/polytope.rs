use serde::{Deserialize, Serialize};

use super::{GeometryError, HalfSpace, WorkspaceBox, GEOM_TOL, PARALLEL_TOL};
use crate::Point;

/// Convex free region around a seed point.
///
/// `support[i]` is the position of the i-th boundary half-space in the list
/// passed to [`intersect_polytope`] (scenario half-spaces first, then the four
/// workspace sides). Edge `i` runs from `vertices[i - 1]` to `vertices[i]`
/// (cyclically), so vertices are listed counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreePolytope {
    pub vertices: Vec<Point>,
    pub support: Vec<usize>,
    pub edges: Vec<HalfSpace>,
    pub seed: Point,
}

impl FreePolytope {
    pub fn scenario_support_count(&self) -> usize {
        self.edges.iter().filter(|h| h.origin.is_scenario()).count()
    }

    /// Number of scenario-sourced edges contributed by `obstacle`.
    pub fn support_count_for(&self, obstacle: usize) -> usize {
        self.edges
            .iter()
            .filter(|h| matches!(h.origin, super::Origin::Scenario { obstacle: o, .. } if o == obstacle))
            .count()
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        self.edges.iter().all(|h| h.contains(p, tol))
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a.x * b.y - a.y * b.x
            })
            .sum::<f64>()
            / 2.0
    }
}

/// Direction of travel along the boundary of `h` that keeps the interior on
/// the left.
fn walk_direction(h: &HalfSpace) -> Point {
    Point::new(-h.normal.y, h.normal.x)
}

/// Candidate next boundary when travelling from `from` along `dir`.
struct Hit {
    id: usize,
    t: f64,
    turn_cos: f64,
}

impl Hit {
    /// Earlier hit wins; at a shared vertex the sharper counter-clockwise
    /// turn wins, then the lower id.
    fn beats(&self, other: &Hit) -> bool {
        let tol = 1e-12 * (1.0 + self.t.abs().max(other.t.abs()));
        if self.t < other.t - tol {
            return true;
        }
        if self.t > other.t + tol {
            return false;
        }
        if self.turn_cos < other.turn_cos - 1e-15 {
            return true;
        }
        if self.turn_cos > other.turn_cos + 1e-15 {
            return false;
        }
        self.id < other.id
    }
}

fn first_hit(all: &[HalfSpace], from: &Point, dir: &Point, skip: Option<usize>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (id, h) in all.iter().enumerate() {
        if Some(id) == skip {
            continue;
        }
        let rate = h.normal.dot(dir);
        if rate <= PARALLEL_TOL {
            continue;
        }
        let t = (h.offset - h.normal.dot(from)).max(0.0) / rate;
        let hit = Hit {
            id,
            t,
            turn_cos: dir.dot(&walk_direction(h)),
        };
        if best.as_ref().map_or(true, |b| hit.beats(b)) {
            best = Some(hit);
        }
    }
    best
}

/// Minimal convex polygon containing `seed` cut out by `halfspaces` and the
/// workspace box.
///
/// Walks the boundary counter-clockwise: the ray from the seed along +x picks
/// the starting edge; from each edge the walk moves to the first boundary it
/// crosses, and stops when it re-enters the starting edge.
pub fn intersect_polytope(
    halfspaces: &[HalfSpace],
    workspace: &WorkspaceBox,
    seed: &Point,
) -> Result<FreePolytope, GeometryError> {
    let mut all = Vec::with_capacity(halfspaces.len() + 4);
    all.extend_from_slice(halfspaces);
    all.extend_from_slice(&workspace.halfspaces());

    let violated: Vec<usize> = all
        .iter()
        .enumerate()
        .filter(|(_, h)| h.violation(seed) > GEOM_TOL)
        .map(|(i, _)| i)
        .collect();
    if !violated.is_empty() {
        return Err(GeometryError::InfeasibleSeed { violated });
    }

    let ray = Point::new(1.0, 0.0);
    let start = first_hit(&all, seed, &ray, None).expect("workspace box bounds the +x ray");
    let mut current = start.id;
    let mut at = seed + ray * start.t;

    let mut vertices = Vec::new();
    let mut support = Vec::new();
    let max_steps = all.len() + 2;
    for _ in 0..max_steps {
        let dir = walk_direction(&all[current]);
        let next = first_hit(&all, &at, &dir, Some(current)).ok_or(GeometryError::WalkDidNotClose {
            steps: support.len(),
        })?;
        let vertex = at + dir * next.t;
        support.push(current);
        vertices.push(vertex);
        if next.id == start.id {
            return Ok(finish(vertices, support, &all, *seed));
        }
        current = next.id;
        at = vertex;
    }
    Err(GeometryError::WalkDidNotClose { steps: max_steps })
}

fn finish(vertices: Vec<Point>, support: Vec<usize>, all: &[HalfSpace], seed: Point) -> FreePolytope {
    // Edge i ends at vertices[i]; rotate so edge i runs vertices[i-1] -> vertices[i].
    let n = vertices.len();
    let mut verts = Vec::with_capacity(n);
    for i in 0..n {
        let v = vertices[i];
        if verts.last().map_or(true, |last: &Point| (last - v).norm() > PARALLEL_TOL) {
            verts.push(v);
        }
    }
    if verts.len() > 1 && (verts[0] - verts[verts.len() - 1]).norm() <= PARALLEL_TOL {
        verts.pop();
    }
    let edges = support.iter().map(|&i| all[i]).collect();
    FreePolytope {
        vertices: verts,
        support,
        edges,
        seed,
    }
}

/// Outcome of checking the number of supporting scenarios against `s_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupportCheck {
    Ok(usize),
    Violation(usize),
}

impl SupportCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, SupportCheck::Ok(_))
    }
}

pub fn verify_support_bound(polytope: &FreePolytope, s_bar: usize) -> SupportCheck {
    let count = polytope.scenario_support_count();
    if count <= s_bar {
        SupportCheck::Ok(count)
    } else {
        SupportCheck::Violation(count)
    }
}
