//! Scenario half-spaces and the minimal free-space polygon they bound.

mod halfspace;
mod oracle;
mod polytope;
mod selection;

pub use halfspace::{build_halfspace, HalfSpace, Origin, WorkspaceBox};
pub use oracle::brute_force_support;
pub use polytope::{intersect_polytope, verify_support_bound, FreePolytope, SupportCheck};
pub use selection::{discard_outliers, select_nearest};

use thiserror::Error;

/// Tolerance for geometric predicates (m).
pub const GEOM_TOL: f64 = 1e-9;
/// Cross products below this are treated as parallel.
pub const PARALLEL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("scenario coincides with the linearization point (distance {distance:e})")]
    Degenerate { distance: f64 },
    #[error("seed violates {} half-space(s): {violated:?}", violated.len())]
    InfeasibleSeed { violated: Vec<usize> },
    #[error("edge walk did not close after {steps} steps")]
    WalkDidNotClose { steps: usize },
}
