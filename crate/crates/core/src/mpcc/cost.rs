use serde::{Deserialize, Serialize};

use super::{ControlInput, ReferencePath, RobotState, VehicleGeometry};
use crate::geometry::FreePolytope;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub contour: f64,
    pub lag: f64,
    pub progress: f64,
    /// On (accel, yaw_accel, path_speed).
    pub input: [f64; 3],
    pub boundary: f64,
    /// Clearance below which the boundary term is active (m).
    pub activation: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            contour: 1.0,
            lag: 1.0,
            progress: 0.5,
            input: [0.1, 0.1, 0.01],
            boundary: 5.0,
            activation: 0.4,
        }
    }
}

/// Contour (left-normal) and lag (tangential) error of `pos` relative to
/// the path point at arc length `progress`.
pub fn contour_lag_errors(pos: &Point, progress: f64, path: &ReferencePath) -> (f64, f64) {
    let d = pos - path.point_at(progress);
    let t = path.tangent_at(progress);
    let n = Point::new(-t.y, t.x);
    (n.dot(&d), t.dot(&d))
}

/// `q_b * sum_j max(0, d_act - clearance_j)^2` over the polytope's edges.
pub fn boundary_term(pos: &Point, polytope: &FreePolytope, weights: &CostWeights) -> f64 {
    polytope
        .edges
        .iter()
        .map(|h| (weights.activation - h.clearance(pos)).max(0.0).powi(2))
        .sum::<f64>()
        * weights.boundary
}

/// Least-squares residuals whose squared sum is the stage cost without the
/// progress reward. `polytopes` holds one entry per disc.
pub fn stage_residuals(
    state: &RobotState,
    input: &ControlInput,
    path: &ReferencePath,
    polytopes: &[FreePolytope],
    geometry: &VehicleGeometry,
    weights: &CostWeights,
) -> Vec<f64> {
    let (e_c, e_l) = contour_lag_errors(&state.pos, state.progress, path);
    let mut r = Vec::with_capacity(5 + polytopes.iter().map(|p| p.edges.len()).sum::<usize>());
    r.push(weights.contour.sqrt() * e_c);
    r.push(weights.lag.sqrt() * e_l);
    r.push(weights.input[0].sqrt() * input.accel);
    r.push(weights.input[1].sqrt() * input.yaw_accel);
    r.push(weights.input[2].sqrt() * input.path_speed);
    let qb = weights.boundary.sqrt();
    for (disc, poly) in polytopes.iter().enumerate() {
        let c = geometry.disc_center(&state.pos, state.heading, disc);
        for h in &poly.edges {
            r.push(qb * (weights.activation - h.clearance(&c)).max(0.0));
        }
    }
    r
}

pub fn stage_cost(
    state: &RobotState,
    input: &ControlInput,
    path: &ReferencePath,
    polytopes: &[FreePolytope],
    geometry: &VehicleGeometry,
    weights: &CostWeights,
    dt: f64,
) -> f64 {
    let r = stage_residuals(state, input, path, polytopes, geometry, weights);
    r.iter().map(|v| v * v).sum::<f64>() - weights.progress * input.path_speed * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{intersect_polytope, WorkspaceBox};
    use approx::assert_relative_eq;

    fn road() -> ReferencePath {
        ReferencePath::straight(Point::new(0.0, 0.0), Point::new(20.0, 0.0)).unwrap()
    }

    fn big_box(center: Point) -> FreePolytope {
        intersect_polytope(&[], &WorkspaceBox::centered(center, 40.0), &center).unwrap()
    }

    #[test]
    fn on_path_costs_nothing() {
        let s = RobotState { pos: Point::new(5.0, 0.0), progress: 5.0, ..RobotState::default() };
        let c = stage_cost(&s, &ControlInput::default(), &road(), &[big_box(s.pos)], &VehicleGeometry::default(), &CostWeights::default(), 0.2);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn unit_lateral_offset() {
        let w = CostWeights { contour: 2.5, ..CostWeights::default() };
        let s = RobotState { pos: Point::new(5.0, 1.0), progress: 5.0, ..RobotState::default() };
        let c = stage_cost(&s, &ControlInput::default(), &road(), &[big_box(s.pos)], &VehicleGeometry::default(), &w, 0.2);
        assert_relative_eq!(c, 2.5, epsilon = 1e-12);
        let (e_c, e_l) = contour_lag_errors(&s.pos, 5.0, &road());
        assert_relative_eq!(e_c, 1.0, epsilon = 1e-12);
        assert_relative_eq!(e_l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn boundary_at_half_activation() {
        let w = CostWeights::default();
        let p = Point::new(0.0, 0.0);
        // Box whose +x side lies d_act/2 away; other sides are far.
        let ws = WorkspaceBox::new(Point::new(-20.0, -20.0), Point::new(w.activation / 2.0, 20.0));
        let poly = intersect_polytope(&[], &ws, &p).unwrap();
        assert_relative_eq!(boundary_term(&p, &poly, &w), w.boundary * (w.activation / 2.0).powi(2), epsilon = 1e-14);
    }

    #[test]
    fn progress_reward_is_linear() {
        let s = RobotState { pos: Point::new(5.0, 0.0), progress: 5.0, ..RobotState::default() };
        let u = ControlInput { path_speed: 1.0, ..ControlInput::default() };
        let w = CostWeights::default();
        let c = stage_cost(&s, &u, &road(), &[big_box(s.pos)], &VehicleGeometry::default(), &w, 0.2);
        assert_relative_eq!(c, w.input[2] - w.progress * 0.2, epsilon = 1e-14);
    }

    #[test]
    fn boundary_term_is_continuous_at_activation() {
        let w = CostWeights::default();
        let ws = |x: f64| WorkspaceBox::new(Point::new(-20.0, -20.0), Point::new(x, 20.0));
        let p = Point::zeros();
        let below = boundary_term(&p, &intersect_polytope(&[], &ws(w.activation - 1e-7), &p).unwrap(), &w);
        let above = boundary_term(&p, &intersect_polytope(&[], &ws(w.activation + 1e-7), &p).unwrap(), &w);
        assert!(below < 1e-12 && above == 0.0);
    }
}
