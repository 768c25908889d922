use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::predict::{cold_start_points, predict_linearization_points};
use super::{
    rk4_step, stage_residuals, ControlInput, CostWeights, ReferencePath, RobotState, Trajectory, VehicleGeometry,
    VehicleLimits, NU, NX,
};
use crate::geometry::{
    build_halfspace, discard_outliers, intersect_polytope, select_nearest, FreePolytope, GeometryError, HalfSpace,
    Origin, WorkspaceBox,
};
use crate::risk::RiskProfile;
use crate::solver::{OcpModel, StateConstraint};
use crate::uncertainty::{cholesky_factor, ObstaclePrediction, SamplingError, ScenarioBatch};
use crate::Point;

/// Controller parameters shared by every cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpccConfig {
    pub dt: f64,
    pub horizon: usize,
    pub control_period: f64,
    pub limits: VehicleLimits,
    pub weights: CostWeights,
    pub geometry: VehicleGeometry,
    /// Side of the square workspace centered on the robot (m).
    pub workspace_side: f64,
    /// Passes of seed projection before falling back to older polytopes.
    pub projection_passes: usize,
    /// A linearization point closer than `r + lift_sigmas * sigma_max` to an
    /// obstacle mean is moved out to that distance before the obstacle's
    /// half-spaces are built. Zero disables lifting.
    pub lift_sigmas: f64,
}

impl Default for MpccConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            horizon: 15,
            control_period: 0.05,
            limits: VehicleLimits::default(),
            weights: CostWeights::default(),
            geometry: VehicleGeometry::default(),
            workspace_side: 40.0,
            projection_passes: 10,
            lift_sigmas: 4.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("inconsistent program inputs: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncidentKind {
    /// The linearization point lay inside an obstacle's cloud and was lifted.
    SeedLifted { obstacle: usize },
    /// The linearization point was crowded and an earlier clear point of
    /// the plan was used instead (`from` 0 is the robot position).
    SeedBacktracked { from: usize },
    /// The linearization point was infeasible and was projected.
    SeedProjected,
    /// Projection failed; the previous cycle's polygon was reused.
    PreviousPolytope,
    /// No usable polygon; only the workspace box constrains the stage.
    WorkspaceOnly,
    /// A scenario coincided with the linearization point and was skipped.
    DegenerateScenario,
    /// An obstacle contributed more than `s_bar` supporting half-spaces.
    SupportBound { obstacle: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub stage: usize,
    pub disc: usize,
    pub kind: IncidentKind,
}

/// One cycle's scenario program.
#[derive(Debug, Clone, PartialEq)]
pub struct SPInstance {
    pub initial: RobotState,
    pub config: MpccConfig,
    pub path: ReferencePath,
    /// `[stage - 1][disc]`.
    pub polytopes: Vec<Vec<FreePolytope>>,
    pub linearization: Vec<Vec<Point>>,
    pub incidents: Vec<Incident>,
    pub support_violations: usize,
    /// Largest per-obstacle support count over all stages and discs.
    pub max_support: usize,
}

impl SPInstance {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Largest `normal . c - offset` over every stage polygon and disc.
    pub fn max_violation(&self, states: &[RobotState]) -> f64 {
        let g = &self.config.geometry;
        let mut worst = f64::NEG_INFINITY;
        for (k, polys) in self.polytopes.iter().enumerate() {
            let s = &states[k + 1];
            for (d, poly) in polys.iter().enumerate() {
                let c = g.disc_center(&s.pos, s.heading, d);
                for h in &poly.edges {
                    worst = worst.max(h.violation(&c));
                }
            }
        }
        worst
    }
}

/// Builds every stage's free-space polygon from the obstacles' scenario batches.
///
/// `batches[i]` belongs to `obstacles[i]`; only its `relevant` samples are used.
#[allow(clippy::too_many_arguments)]
pub fn assemble_scenario_program(
    state: &RobotState,
    prev: Option<&Trajectory>,
    previous: Option<&SPInstance>,
    obstacles: &[ObstaclePrediction],
    batches: &[ScenarioBatch],
    profile: &RiskProfile,
    path: &ReferencePath,
    config: &MpccConfig,
) -> Result<SPInstance, ProgramError> {
    let n = config.horizon;
    let discs = config.geometry.discs();
    if obstacles.len() != batches.len() {
        return Err(ProgramError::Inconsistent(format!(
            "{} obstacles but {} batches",
            obstacles.len(),
            batches.len()
        )));
    }
    if discs == 0 {
        return Err(ProgramError::Inconsistent("vehicle has no discs".into()));
    }
    for o in obstacles {
        if o.stages.len() != n {
            return Err(ProgramError::Inconsistent(format!(
                "obstacle {} has {} stages, horizon is {n}",
                o.id,
                o.stages.len()
            )));
        }
    }
    let linearization = match prev {
        Some(t) if t.horizon() == n => predict_linearization_points(t, &config.geometry),
        _ => cold_start_points(state, n, config.dt, &config.geometry),
    };
    let workspace = WorkspaceBox::centered(state.pos, config.workspace_side);
    let keep_total = profile.keep + profile.discard;

    let mut polytopes = Vec::with_capacity(n);
    let mut incidents = Vec::new();
    let mut support_violations = 0;
    let mut max_support = 0;
    let mut deltas: Vec<Vec<Point>> = Vec::with_capacity(obstacles.len());
    let relevant: Vec<Vec<Point>> = batches.iter().map(|b| b.relevant_samples()).collect();

    for k in 0..n {
        deltas.clear();
        for (o, z) in obstacles.iter().zip(&relevant) {
            let st = &o.stages[k];
            let l = cholesky_factor(&st.covariance)?;
            deltas.push(z.iter().map(|zi| l * zi + st.mean).collect());
        }
        let mut stage_polys = Vec::with_capacity(discs);
        for d in 0..discs {
            let mut seed = linearization[k][d];
            if config.lift_sigmas > 0.0 && !clear_of(&seed, obstacles, k, config) {
                let earlier = (0..k).rev().map(|j| (j + 1, linearization[j][d])).chain([(0, state.pos)]);
                if let Some((from, p)) = earlier.into_iter().find(|(_, p)| clear_of(p, obstacles, k, config)) {
                    seed = p;
                    incidents.push(Incident { stage: k + 1, disc: d, kind: IncidentKind::SeedBacktracked { from } });
                }
            }
            let mut halfspaces: Vec<HalfSpace> = Vec::new();
            let mut candidates = vec![seed];
            for ((o, batch), delta) in obstacles.iter().zip(batches).zip(&deltas) {
                let r = config.geometry.disc_radius + o.radius;
                let st = &o.stages[k];
                let local = lifted_seed(seed, st.mean, &st.covariance, r, config.lift_sigmas, state.pos);
                if local != seed {
                    candidates.push(local);
                    incidents.push(Incident { stage: k + 1, disc: d, kind: IncidentKind::SeedLifted { obstacle: o.id } });
                }
                let nearest = select_nearest(delta, &local, keep_total);
                let kept = discard_outliers(&nearest, delta, &st.mean, profile.discard);
                for i in kept {
                    let origin = Origin::Scenario { obstacle: o.id, index: batch.relevant[i] };
                    match build_halfspace(&delta[i], &local, r, origin) {
                        Ok(h) => halfspaces.push(h),
                        Err(_) => incidents.push(Incident { stage: k + 1, disc: d, kind: IncidentKind::DegenerateScenario }),
                    }
                }
            }
            let start = candidates
                .iter()
                .copied()
                .find(|c| halfspaces.iter().all(|h| h.violation(c) < 0.0))
                .unwrap_or(seed);
            let poly = match intersect_polytope(&halfspaces, &workspace, &start) {
                Ok(p) => p,
                Err(GeometryError::InfeasibleSeed { .. }) => {
                    fallback(&halfspaces, &workspace, seed, previous, k, d, config, &mut incidents)
                }
                Err(e) => {
                    log::warn!("stage {} disc {d}: {e}", k + 1);
                    fallback(&halfspaces, &workspace, seed, previous, k, d, config, &mut incidents)
                }
            };
            for o in obstacles {
                let count = poly.support_count_for(o.id);
                max_support = max_support.max(count);
                if count > profile.s_bar {
                    support_violations += 1;
                    incidents.push(Incident {
                        stage: k + 1,
                        disc: d,
                        kind: IncidentKind::SupportBound { obstacle: o.id, count },
                    });
                }
            }
            stage_polys.push(poly);
        }
        polytopes.push(stage_polys);
    }

    Ok(SPInstance {
        initial: *state,
        config: config.clone(),
        path: path.clone(),
        polytopes,
        linearization,
        incidents,
        support_violations,
        max_support,
    })
}

fn lift_reach(cov: &nalgebra::Matrix2<f64>, r: f64, sigmas: f64) -> f64 {
    r + sigmas * cov.symmetric_eigenvalues().max().max(0.0).sqrt()
}

/// True when `p` is at least the lift reach from every obstacle at stage `k`.
fn clear_of(p: &Point, obstacles: &[ObstaclePrediction], k: usize, config: &MpccConfig) -> bool {
    obstacles.iter().all(|o| {
        let st = &o.stages[k];
        let r = config.geometry.disc_radius + o.radius;
        (p - st.mean).norm() >= lift_reach(&st.covariance, r, config.lift_sigmas)
    })
}

/// Moves `seed` away from `mean` to `r + sigmas * sigma_max` when it is
/// closer than that: radially if the seed already clears `r`, otherwise
/// toward `robot` so the plan yields.
fn lifted_seed(seed: Point, mean: Point, cov: &nalgebra::Matrix2<f64>, r: f64, sigmas: f64, robot: Point) -> Point {
    if sigmas <= 0.0 {
        return seed;
    }
    let reach = lift_reach(cov, r, sigmas);
    let off = seed - mean;
    let dist = off.norm();
    if dist >= reach {
        return seed;
    }
    let back = robot - mean;
    let dir = if dist > r {
        off / dist
    } else if back.norm() > 1e-9 {
        back.normalize()
    } else if dist > 1e-9 {
        off / dist
    } else {
        Point::new(-1.0, 0.0)
    };
    mean + dir * reach
}

#[allow(clippy::too_many_arguments)]
fn fallback(
    halfspaces: &[HalfSpace],
    workspace: &WorkspaceBox,
    seed: Point,
    previous: Option<&SPInstance>,
    k: usize,
    d: usize,
    config: &MpccConfig,
    incidents: &mut Vec<Incident>,
) -> FreePolytope {
    let mut p = seed;
    for _ in 0..config.projection_passes {
        let mut moved = false;
        for h in halfspaces {
            let v = h.violation(&p);
            if v > 0.0 {
                p -= h.normal * (v + 1e-6);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    if let Ok(poly) = intersect_polytope(halfspaces, workspace, &p) {
        incidents.push(Incident { stage: k + 1, disc: d, kind: IncidentKind::SeedProjected });
        return poly;
    }
    if let Some(prev) = previous {
        let j = (k + 1).min(prev.polytopes.len() - 1);
        if let Some(poly) = prev.polytopes.get(j).and_then(|s| s.get(d)) {
            incidents.push(Incident { stage: k + 1, disc: d, kind: IncidentKind::PreviousPolytope });
            return poly.clone();
        }
    }
    incidents.push(Incident { stage: k + 1, disc: d, kind: IncidentKind::WorkspaceOnly });
    let center = (workspace.min + workspace.max) / 2.0;
    intersect_polytope(&[], workspace, &center).expect("box contains its center")
}

fn state_of(x: &DVector<f64>) -> RobotState {
    RobotState::from_slice(x.as_slice())
}

impl OcpModel for SPInstance {
    fn nx(&self) -> usize {
        NX
    }

    fn nu(&self) -> usize {
        NU
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn initial_state(&self) -> DVector<f64> {
        self.initial.to_vector()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let xs: [f64; NX] = x.as_slice().try_into().expect("state dimension");
        DVector::from_row_slice(&rk4_step(&xs, &ControlInput::from_slice(u.as_slice()), self.config.dt))
    }

    fn residuals(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(stage_residuals(
            &state_of(x),
            &ControlInput::from_slice(u.as_slice()),
            &self.path,
            &self.polytopes[k - 1],
            &self.config.geometry,
            &self.config.weights,
        ))
    }

    fn input_gradient(&self) -> DVector<f64> {
        DVector::from_vec(vec![0.0, 0.0, -self.config.weights.progress * self.config.dt])
    }

    fn input_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let l = &self.config.limits;
        (l.input_lower().to_vector(), l.input_upper().to_vector())
    }

    fn constraints(&self, k: usize, x: &DVector<f64>) -> Vec<StateConstraint> {
        let s = state_of(x);
        let g = &self.config.geometry;
        let groups = g.discs() + 1;
        let base = (k - 1) * groups;
        let mut out = Vec::new();
        for (d, poly) in self.polytopes[k - 1].iter().enumerate() {
            let c = g.disc_center(&s.pos, s.heading, d);
            let dc_dtheta = Point::new(-s.heading.sin(), s.heading.cos()) * g.disc_offsets[d];
            for h in &poly.edges {
                out.push(StateConstraint {
                    value: h.violation(&c),
                    grad: DVector::from_vec(vec![h.normal.x, h.normal.y, h.normal.dot(&dc_dtheta), 0.0, 0.0, 0.0]),
                    group: base + d,
                });
            }
        }
        let l = &self.config.limits;
        let mut speed = |value: f64, sign: f64| {
            out.push(StateConstraint {
                value,
                grad: DVector::from_vec(vec![0.0, 0.0, 0.0, sign, 0.0, 0.0]),
                group: base + groups - 1,
            })
        };
        speed(s.speed - l.speed_max, 1.0);
        speed(l.speed_min - s.speed, -1.0);
        out
    }

    fn slack_groups(&self) -> usize {
        self.config.horizon * (self.config.geometry.discs() + 1)
    }
}

/// Summary of scenario handling for one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AssemblyStats {
    pub incidents: usize,
    pub support_violations: usize,
    pub max_support: usize,
    pub max_constraints: usize,
}

impl AssemblyStats {
    pub fn of(sp: &SPInstance) -> Self {
        Self {
            incidents: sp.incidents.len(),
            support_violations: sp.support_violations,
            max_support: sp.max_support,
            max_constraints: sp
                .polytopes
                .iter()
                .flatten()
                .map(|p| p.edges.len())
                .max()
                .unwrap_or(0),
        }
    }
}
