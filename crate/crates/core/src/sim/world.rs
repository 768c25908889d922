use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::uncertainty::{cholesky_factor, Covariance, ObstaclePrediction, StagePrediction, StandardSampler, TruncationSpec};
use crate::Point;

/// Fastest walker the harness accepts (m/s).
pub const MAX_PEDESTRIAN_SPEED: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    ConstantVelocity,
    /// Walks the polyline at `|velocity|`, then stops.
    WaypointCrossing { waypoints: Vec<Point> },
}

/// Non-interactive walker: a scripted nominal path plus independent
/// per-step noise from the same law the planner assumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianAgent {
    pub id: usize,
    /// Nominal position at time zero.
    pub pos: Point,
    pub velocity: Point,
    pub radius: f64,
    pub motion: Motion,
    pub truncation: TruncationSpec,
    pub covariance: Covariance,
}

impl PedestrianAgent {
    pub fn nominal_at(&self, t: f64) -> Point {
        match &self.motion {
            Motion::ConstantVelocity => self.pos + self.velocity * t,
            Motion::WaypointCrossing { waypoints } => {
                let mut left = self.velocity.norm() * t;
                let mut at = self.pos;
                for w in waypoints {
                    let seg = (w - at).norm();
                    if left <= seg {
                        return at + (w - at) * (left / seg.max(1e-12));
                    }
                    left -= seg;
                    at = *w;
                }
                at
            }
        }
    }

    /// Per-stage model distribution seen from time `t`.
    pub fn predict(&self, t: f64, horizon: usize, dt: f64) -> ObstaclePrediction {
        ObstaclePrediction {
            id: self.id,
            stages: (1..=horizon)
                .map(|k| StagePrediction {
                    mean: self.nominal_at(t + k as f64 * dt),
                    covariance: self.covariance,
                })
                .collect(),
            truncation: self.truncation,
            radius: self.radius,
        }
    }
}

/// Pedestrians crossing a straight road along +x at staggered slots,
/// timed to meet the robot near the centerline.
pub fn crossing_scenario(config: &RunConfig, seed: u64, robot_speed: f64) -> Vec<PedestrianAgent> {
    let sim = &config.sim;
    let n = sim.pedestrians;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let cov = config.uncertainty.covariance();
    let slot = sim.course_length * 0.75 / n.max(1) as f64;
    (0..n)
        .map(|i| {
            let x = sim.course_length * 0.15 + slot * (i as f64 + rng.gen_range(0.2..0.8));
            let [lo, hi] = sim.pedestrian_speed;
            let speed = rng.gen_range(lo..=hi).min(MAX_PEDESTRIAN_SPEED);
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let meet = x / robot_speed.max(0.1) + rng.gen_range(-sim.crossing_jitter..=sim.crossing_jitter);
            let start = Point::new(x, -dir * speed * meet);
            PedestrianAgent {
                id: i,
                pos: start,
                velocity: Point::new(0.0, dir * speed),
                radius: sim.pedestrian_radius,
                motion: Motion::ConstantVelocity,
                truncation: config.uncertainty.truncation,
                covariance: cov,
            }
        })
        .collect()
}

/// Draws true pedestrian positions around their nominal paths.
pub struct PedestrianNoise {
    samplers: Vec<StandardSampler>,
    factors: Vec<nalgebra::Matrix2<f64>>,
}

impl PedestrianNoise {
    pub fn new(agents: &[PedestrianAgent], seed: u64) -> Self {
        let samplers = agents
            .iter()
            .map(|a| StandardSampler::with_stream(a.truncation, seed, 100 + a.id as u64).expect("validated truncation"))
            .collect();
        let factors = agents
            .iter()
            .map(|a| cholesky_factor(&a.covariance).expect("validated covariance"))
            .collect();
        Self { samplers, factors }
    }

    pub fn positions(&mut self, agents: &[PedestrianAgent], t: f64) -> Vec<Point> {
        agents
            .iter()
            .zip(self.samplers.iter_mut().zip(&self.factors))
            .map(|(a, (s, l))| a.nominal_at(t) + l * s.draw())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_velocity_prediction() {
        let a = PedestrianAgent {
            id: 3,
            pos: Point::new(5.0, -2.0),
            velocity: Point::new(0.0, 1.0),
            radius: 0.0,
            motion: Motion::ConstantVelocity,
            truncation: TruncationSpec::None,
            covariance: Covariance::identity() * 0.01,
        };
        let p = a.predict(1.0, 15, 0.2);
        assert_eq!(p.stages.len(), 15);
        assert!((p.stages[0].mean - Point::new(5.0, -0.8)).norm() < 1e-12);
        assert!((p.stages[14].mean - Point::new(5.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn waypoint_walk() {
        let a = PedestrianAgent {
            id: 0,
            pos: Point::zeros(),
            velocity: Point::new(1.0, 0.0),
            radius: 0.0,
            motion: Motion::WaypointCrossing { waypoints: vec![Point::new(1.0, 0.0), Point::new(1.0, 1.0)] },
            truncation: TruncationSpec::None,
            covariance: Covariance::identity(),
        };
        assert!((a.nominal_at(1.5) - Point::new(1.0, 0.5)).norm() < 1e-12);
        assert!((a.nominal_at(9.0) - Point::new(1.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn scenario_respects_speed_and_count() {
        let mut cfg = RunConfig::default();
        for n in [0, 2, 4, 6] {
            cfg.sim.pedestrians = n;
            let peds = crossing_scenario(&cfg, 5, 1.8);
            assert_eq!(peds.len(), n);
            for p in &peds {
                assert!(p.velocity.norm() <= MAX_PEDESTRIAN_SPEED);
                assert!(p.pos.x > 0.0 && p.pos.x < cfg.sim.course_length);
            }
        }
        assert_eq!(crossing_scenario(&cfg, 5, 1.8), crossing_scenario(&cfg, 5, 1.8));
    }
}
