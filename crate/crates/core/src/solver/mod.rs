//! Dense QP and multiple-shooting SQP.

pub mod qp;
pub mod sqp;

pub use qp::{solve_qp, QpError, QpSettings, QpSolution};
pub use sqp::{rollout, solve_ocp, OcpModel, OcpReport, OcpTrajectory, SolveStatus, SqpSettings, StateConstraint};

use nalgebra::DVector;

use crate::mpcc::{self, ControlInput, RobotState, SPInstance, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Inputs from the SQP rolled out with the clamped dynamics.
    pub trajectory: Trajectory,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Largest polygon violation of any disc, clipped at zero (m).
    pub max_constraint_violation: f64,
    pub max_slack: f64,
    pub slack_used: bool,
    pub dynamics_residual: f64,
    pub wall_time: f64,
    pub status: SolveStatus,
    pub merit_history: Vec<f64>,
}

/// Solves one scenario program, warm-started from `warm` if given.
pub fn solve(instance: &SPInstance, warm: Option<&Trajectory>, budget: f64, settings: &SqpSettings) -> SolveReport {
    let n = instance.horizon();
    let warm_ocp = warm.filter(|w| w.horizon() == n).map(|w| OcpTrajectory {
        states: w.states.iter().map(RobotState::to_vector).collect(),
        inputs: w.inputs.iter().map(ControlInput::to_vector).collect(),
    });
    let rep = solve_ocp(instance, warm_ocp.as_ref(), budget, settings);
    let inputs: Vec<ControlInput> = rep
        .trajectory
        .inputs
        .iter()
        .map(|u: &DVector<f64>| ControlInput::from_slice(u.as_slice()))
        .collect();
    let cfg = &instance.config;
    let states = mpcc::rollout(&instance.initial, &inputs, cfg.dt, &cfg.limits);
    let dynamics_residual = (0..n)
        .map(|k| {
            let next = mpcc::step_dynamics(&states[k], &inputs[k], cfg.dt, &cfg.limits);
            (next.to_vector() - states[k + 1].to_vector()).amax()
        })
        .fold(0.0, f64::max);
    let violation = instance.max_violation(&states).max(0.0);
    let mut status = rep.status;
    if status == SolveStatus::Converged && violation > settings.violation_tol {
        status = SolveStatus::InfeasibleSlacked;
    }
    SolveReport {
        trajectory: Trajectory {
            states,
            inputs,
            stamp: 0,
        },
        iterations: rep.iterations,
        kkt_residual: rep.kkt_residual,
        max_constraint_violation: violation,
        max_slack: rep.max_slack,
        slack_used: rep.slack_used || violation > settings.violation_tol,
        dynamics_residual,
        wall_time: rep.wall_time,
        status,
        merit_history: rep.merit_history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{HalfSpace, Origin};
    use crate::mpcc::{assemble_scenario_program, MpccConfig, ReferencePath};
    use crate::risk::RiskProfile;
    use crate::Point;

    fn profile() -> RiskProfile {
        RiskProfile { eps: 0.0111, beta: 1e-6, s_bar: 20, discard: 50, keep: 150, sample_size: 1000 }
    }

    fn empty_instance(speed: f64) -> SPInstance {
        let path = ReferencePath::straight(Point::new(0.0, 0.0), Point::new(50.0, 0.0)).unwrap();
        let state = RobotState { speed, ..RobotState::default() };
        assemble_scenario_program(&state, None, None, &[], &[], &profile(), &path, &MpccConfig::default()).unwrap()
    }

    #[test]
    fn free_road_follows_path() {
        let sp = empty_instance(1.8);
        let rep = solve(&sp, None, 5.0, &SqpSettings::default());
        assert_eq!(rep.status, SolveStatus::Converged, "{rep:?}");
        assert!(rep.dynamics_residual < 1e-6);
        assert!(!rep.slack_used);
        for s in &rep.trajectory.states {
            assert!(s.pos.y.abs() < 1e-3, "lateral {}", s.pos.y);
        }
        let last = rep.trajectory.states.last().unwrap();
        assert!(last.pos.x > 4.0);
    }

    #[test]
    fn blocking_halfspace_becomes_active() {
        let mut sp = empty_instance(1.8);
        // Without the proximity cost the optimum presses against the wall.
        sp.config.weights.boundary = 0.0;
        let wall = HalfSpace::new(Point::new(1.0, 0.0), 2.0, Origin::Scenario { obstacle: 0, index: 0 });
        for stage in sp.polytopes.iter_mut() {
            for poly in stage.iter_mut() {
                poly.edges.push(wall);
            }
        }
        let rep = solve(&sp, None, 5.0, &SqpSettings::default());
        assert!(rep.max_constraint_violation <= 1e-6, "{}", rep.max_constraint_violation);
        let active = rep.trajectory.states[1..].iter().filter(|s| (s.pos.x - 2.0).abs() < 1e-5).count();
        assert!(active >= 1);
        assert!(!rep.slack_used, "{rep:?}");
    }

    #[test]
    fn warm_resolve_converges_fast() {
        let sp = empty_instance(1.0);
        let first = solve(&sp, None, 5.0, &SqpSettings::default());
        let again = solve(&sp, Some(&first.trajectory), 5.0, &SqpSettings::default());
        assert!(again.iterations <= 2, "{}", again.iterations);
        assert_eq!(again.status, SolveStatus::Converged);
    }
}
