//! Contouring control on a second-order unicycle.

mod cost;
mod path;
mod predict;
mod program;

pub use cost::{boundary_term, contour_lag_errors, stage_cost, stage_residuals, CostWeights};
pub use path::{PathError, ReferencePath};
pub use predict::{cold_start_points, disc_points, predict_linearization_points, warm_start_inputs};
pub use program::{
    assemble_scenario_program, AssemblyStats, Incident, IncidentKind, MpccConfig, ProgramError, SPInstance,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::Point;

pub const NX: usize = 6;
pub const NU: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub pos: Point,
    pub heading: f64,
    pub speed: f64,
    pub yaw_rate: f64,
    /// Arc length along the reference path.
    pub progress: f64,
}

impl RobotState {
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.pos.x, self.pos.y, self.heading, self.speed, self.yaw_rate, self.progress])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            pos: Point::new(v[0], v[1]),
            heading: v[2],
            speed: v[3],
            yaw_rate: v[4],
            progress: v[5],
        }
    }

    pub fn velocity(&self) -> Point {
        Point::new(self.heading.cos(), self.heading.sin()) * self.speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: f64,
    pub yaw_accel: f64,
    /// Virtual progress speed along the path.
    pub path_speed: f64,
}

impl ControlInput {
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.accel, self.yaw_accel, self.path_speed])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            accel: v[0],
            yaw_accel: v[1],
            path_speed: v[2],
        }
    }
}

/// Planned states `x_0..x_N` and inputs `u_0..u_{N-1}` of cycle `stamp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<RobotState>,
    pub inputs: Vec<ControlInput>,
    pub stamp: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

/// State and input bounds of the platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleLimits {
    pub speed_min: f64,
    pub speed_max: f64,
    pub accel_max: f64,
    pub yaw_accel_max: f64,
    pub path_speed_max: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        Self {
            speed_min: 0.0,
            speed_max: 2.0,
            accel_max: 3.0,
            yaw_accel_max: 3.0,
            path_speed_max: 1.8,
        }
    }
}

impl VehicleLimits {
    pub fn input_lower(&self) -> ControlInput {
        ControlInput {
            accel: -self.accel_max,
            yaw_accel: -self.yaw_accel_max,
            path_speed: 0.0,
        }
    }

    pub fn input_upper(&self) -> ControlInput {
        ControlInput {
            accel: self.accel_max,
            yaw_accel: self.yaw_accel_max,
            path_speed: self.path_speed_max,
        }
    }
}

/// The robot footprint as discs placed along the heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleGeometry {
    pub disc_offsets: Vec<f64>,
    pub disc_radius: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        Self {
            disc_offsets: vec![0.0],
            disc_radius: 0.3,
        }
    }
}

impl VehicleGeometry {
    pub fn discs(&self) -> usize {
        self.disc_offsets.len()
    }

    pub fn disc_center(&self, pos: &Point, heading: f64, disc: usize) -> Point {
        pos + Point::new(heading.cos(), heading.sin()) * self.disc_offsets[disc]
    }
}

fn derivative(x: &[f64; NX], u: &ControlInput) -> [f64; NX] {
    [
        x[3] * x[2].cos(),
        x[3] * x[2].sin(),
        x[4],
        u.accel,
        u.yaw_accel,
        u.path_speed,
    ]
}

/// RK4 substeps per integration interval.
pub const RK4_SUBSTEPS: usize = 4;

/// Integrates over `dt` with [`RK4_SUBSTEPS`] RK4 steps, without the speed clamp.
pub fn rk4_step(x: &[f64; NX], u: &ControlInput, dt: f64) -> [f64; NX] {
    let h = dt / RK4_SUBSTEPS as f64;
    let mut s = *x;
    for _ in 0..RK4_SUBSTEPS {
        s = rk4_single(&s, u, h);
    }
    s
}

fn rk4_single(x: &[f64; NX], u: &ControlInput, dt: f64) -> [f64; NX] {
    let shifted = |base: &[f64; NX], k: &[f64; NX], h: f64| {
        let mut out = *base;
        for i in 0..NX {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = derivative(x, u);
    let k2 = derivative(&shifted(x, &k1, dt / 2.0), u);
    let k3 = derivative(&shifted(x, &k2, dt / 2.0), u);
    let k4 = derivative(&shifted(x, &k3, dt), u);
    let mut out = *x;
    for i in 0..NX {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

pub fn step_dynamics(state: &RobotState, input: &ControlInput, dt: f64, limits: &VehicleLimits) -> RobotState {
    let x = [state.pos.x, state.pos.y, state.heading, state.speed, state.yaw_rate, state.progress];
    let mut next = RobotState::from_slice(&rk4_step(&x, input, dt));
    next.speed = next.speed.clamp(limits.speed_min, limits.speed_max);
    next
}

pub fn rollout(x0: &RobotState, inputs: &[ControlInput], dt: f64, limits: &VehicleLimits) -> Vec<RobotState> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x0);
    for u in inputs {
        states.push(step_dynamics(states.last().unwrap(), u, dt, limits));
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn wide() -> VehicleLimits {
        VehicleLimits {
            speed_min: -100.0,
            speed_max: 100.0,
            ..VehicleLimits::default()
        }
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let s = RobotState {
            pos: Point::new(1.0, 2.0),
            heading: 0.3,
            progress: 4.0,
            ..RobotState::default()
        };
        assert_eq!(step_dynamics(&s, &ControlInput::default(), 0.2, &wide()), s);
    }

    #[test]
    fn straight_line() {
        let s = RobotState { speed: 1.0, ..RobotState::default() };
        let n = step_dynamics(&s, &ControlInput::default(), 0.2, &wide());
        assert_relative_eq!(n.pos, Point::new(0.2, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn speed_is_clamped() {
        let s = RobotState { speed: 1.9, ..RobotState::default() };
        let u = ControlInput { accel: 3.0, ..ControlInput::default() };
        let n = step_dynamics(&s, &u, 0.2, &VehicleLimits::default());
        assert_eq!(n.speed, 2.0);
    }

    /// Forward Euler with Richardson extrapolation over 1000 and 2000 substeps.
    fn euler_oracle(x: [f64; NX], u: &ControlInput, dt: f64) -> [f64; NX] {
        let euler = |steps: usize| {
            let h = dt / steps as f64;
            let mut s = x;
            for _ in 0..steps {
                let d = derivative(&s, u);
                for i in 0..NX {
                    s[i] += h * d[i];
                }
            }
            s
        };
        let (coarse, fine) = (euler(1000), euler(2000));
        let mut out = [0.0; NX];
        for i in 0..NX {
            out[i] = 2.0 * fine[i] - coarse[i];
        }
        out
    }

    proptest! {
        #[test]
        fn rk4_agrees_with_refined_euler(
            heading in -3.2f64..3.2,
            speed in 0.0f64..2.0,
            yaw_rate in -1.5f64..1.5,
            accel in -3.0f64..3.0,
            yaw_accel in -3.0f64..3.0,
        ) {
            let x = [0.5, -0.3, heading, speed, yaw_rate, 0.0];
            let u = ControlInput { accel, yaw_accel, path_speed: 1.0 };
            let rk = rk4_step(&x, &u, 0.2);
            let eu = euler_oracle(x, &u, 0.2);
            let err = ((rk[0] - eu[0]).powi(2) + (rk[1] - eu[1]).powi(2)).sqrt();
            prop_assert!(err < 1e-6, "position difference {}", err);
        }
    }
}
