use super::{ControlInput, RobotState, Trajectory, VehicleGeometry};
use crate::Point;

/// Disc centers `[stage][disc]` for stages `1..=N` given their states.
pub fn disc_points(states: &[RobotState], geometry: &VehicleGeometry) -> Vec<Vec<Point>> {
    states
        .iter()
        .map(|s| (0..geometry.discs()).map(|d| geometry.disc_center(&s.pos, s.heading, d)).collect())
        .collect()
}

/// Linearization points from the previous plan shifted one stage ahead,
/// the last stage repeated: stage `k` uses `prev.states[k + 1]`, stage `N`
/// uses `prev.states[N]`.
pub fn predict_linearization_points(prev: &Trajectory, geometry: &VehicleGeometry) -> Vec<Vec<Point>> {
    let n = prev.horizon();
    let shifted: Vec<RobotState> = (1..=n).map(|k| prev.states[(k + 1).min(n)]).collect();
    disc_points(&shifted, geometry)
}

/// Constant-velocity propagation of the measured state.
pub fn cold_start_points(state: &RobotState, horizon: usize, dt: f64, geometry: &VehicleGeometry) -> Vec<Vec<Point>> {
    let v = state.velocity();
    let states: Vec<RobotState> = (1..=horizon)
        .map(|k| RobotState {
            pos: state.pos + v * (k as f64 * dt),
            ..*state
        })
        .collect();
    disc_points(&states, geometry)
}

/// Previous inputs, read as a piecewise-constant signal, advanced by
/// `elapsed` seconds; the last input is held.
pub fn warm_start_inputs(prev: &Trajectory, elapsed: f64, dt: f64) -> Vec<ControlInput> {
    let n = prev.horizon();
    (0..n)
        .map(|k| {
            let t = k as f64 * dt + elapsed;
            let idx = ((t / dt + 1e-9).floor() as usize).min(n - 1);
            prev.inputs[idx]
        })
        .collect()
}
