use std::collections::BTreeSet;

use super::{HalfSpace, WorkspaceBox, GEOM_TOL, PARALLEL_TOL};
use crate::Point;

/// Supporting set by enumeration: every pairwise boundary intersection that
/// satisfies all half-spaces is a polygon vertex, and a half-space supports
/// the polygon iff its boundary passes through one of those vertices.
///
/// Cubic in the number of half-spaces; meant for verification, not the
/// planner. Positions follow [`super::intersect_polytope`]: inputs first,
/// then the four workspace sides.
pub fn brute_force_support(
    halfspaces: &[HalfSpace],
    workspace: &WorkspaceBox,
    _seed: &Point,
) -> BTreeSet<usize> {
    let mut all = halfspaces.to_vec();
    all.extend_from_slice(&workspace.halfspaces());

    let mut support = BTreeSet::new();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let (a, b) = (&all[i], &all[j]);
            let det = a.normal.perp(&b.normal);
            if det.abs() < PARALLEL_TOL {
                continue;
            }
            // Cramer's rule on [a.n; b.n] x = [a.b; b.b].
            let x = Point::new(
                (a.offset * b.normal.y - b.offset * a.normal.y) / det,
                (a.normal.x * b.offset - b.normal.x * a.offset) / det,
            );
            if all.iter().all(|h| h.violation(&x) <= GEOM_TOL) {
                for (k, h) in all.iter().enumerate() {
                    if h.violation(&x).abs() <= GEOM_TOL {
                        support.insert(k);
                    }
                }
            }
        }
    }
    support
}
