use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::montecarlo::first_stage_risk;
use super::world::{crossing_scenario, PedestrianNoise};
use super::{Environment, SimError};
use crate::config::RunConfig;
use crate::geometry::Origin;
use crate::mpcc::{
    assemble_scenario_program, rollout, step_dynamics, warm_start_inputs, IncidentKind, ReferencePath, RobotState,
    SPInstance, Trajectory,
};
use crate::solver::{solve, SolveStatus};
use crate::uncertainty::cholesky_factor;
use crate::Point;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub max_first_stage_collision_prob: f64,
    /// Cycles whose first-stage risk exceeded the per-stage eps.
    pub risk_violations: usize,
    pub completed: bool,
    /// Time of goal arrival, or of the timeout (s).
    pub time_to_completion: f64,
    pub planning_time_mean: f64,
    pub planning_time_max: f64,
    pub scenario_time_mean: f64,
    pub scenario_time_max: f64,
    pub support_violations: usize,
    /// Cycles with a polygon fallback or a slacked solve.
    pub feasibility_incidents: usize,
    /// Cycles in which a robot disc overlapped a true pedestrian position.
    pub collisions: usize,
    pub cycles: usize,
    pub unconverged_solves: usize,
    pub max_dynamics_residual: f64,
}

/// One planning cycle as persisted in the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub cycle: usize,
    pub time: f64,
    pub state: RobotState,
    pub input: [f64; 3],
    pub stage1_risk: f64,
    pub collision: bool,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt: f64,
    pub violation: f64,
    pub slack_used: bool,
    pub dynamics_residual: f64,
    pub incidents: usize,
    pub support_violations: usize,
    pub max_support: usize,
    pub planning_ms: f64,
    pub scenario_ms: f64,
    /// Cycle key into the polygon dump, or -1.
    pub polytope_ref: i64,
    pub pedestrians: Vec<Point>,
}

pub const TRACE_COLUMNS: &[&str] = &[
    "cycle", "time", "x", "y", "heading", "speed", "yaw_rate", "progress", "accel", "yaw_accel", "path_speed",
    "stage1_risk", "collision", "status", "iterations", "kkt", "violation", "slack_used", "dynamics_residual",
    "incidents", "support_violations", "max_support", "planning_ms", "scenario_ms", "polytope_ref",
];

/// Columns whose values depend on wall-clock time.
pub const TIMING_COLUMNS: &[&str] = &["planning_ms", "scenario_ms"];

fn status_str(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::IterationCapped => "iteration-capped",
        SolveStatus::InfeasibleSlacked => "infeasible-slacked",
    }
}

fn parse_status(s: &str) -> Option<SolveStatus> {
    Some(match s {
        "converged" => SolveStatus::Converged,
        "iteration-capped" => SolveStatus::IterationCapped,
        "infeasible-slacked" => SolveStatus::InfeasibleSlacked,
        _ => return None,
    })
}

impl TraceRow {
    fn write_csv(&self, out: &mut String) {
        let s = &self.state;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.cycle,
            self.time,
            s.pos.x,
            s.pos.y,
            s.heading,
            s.speed,
            s.yaw_rate,
            s.progress,
            self.input[0],
            self.input[1],
            self.input[2],
            self.stage1_risk,
            self.collision as u8,
            status_str(self.status),
            self.iterations,
            self.kkt,
            self.violation,
            self.slack_used as u8,
            self.dynamics_residual,
            self.incidents,
            self.support_violations,
            self.max_support,
            self.planning_ms,
            self.scenario_ms,
            self.polytope_ref,
        );
        for p in &self.pedestrians {
            let _ = write!(out, ",{},{}", p.x, p.y);
        }
        out.push('\n');
    }

    fn parse(line: &str, line_no: usize) -> Result<Self, SimError> {
        let f: Vec<&str> = line.split(',').collect();
        let err = |what: &str| SimError::Trace { line: line_no, message: what.to_string() };
        if f.len() < TRACE_COLUMNS.len() || (f.len() - TRACE_COLUMNS.len()) % 2 != 0 {
            return Err(err(&format!("expected {}+2k fields, found {}", TRACE_COLUMNS.len(), f.len())));
        }
        let num = |i: usize| -> Result<f64, SimError> {
            f[i].parse::<f64>().map_err(|_| err(&format!("column {} is not a number: {:?}", TRACE_COLUMNS.get(i).unwrap_or(&"pedestrian"), f[i])))
        };
        let int = |i: usize| -> Result<i64, SimError> {
            f[i].parse::<i64>().map_err(|_| err(&format!("column {} is not an integer: {:?}", TRACE_COLUMNS[i], f[i])))
        };
        let mut pedestrians = Vec::new();
        let mut i = TRACE_COLUMNS.len();
        while i < f.len() {
            pedestrians.push(Point::new(num(i)?, num(i + 1)?));
            i += 2;
        }
        Ok(Self {
            cycle: int(0)? as usize,
            time: num(1)?,
            state: RobotState {
                pos: Point::new(num(2)?, num(3)?),
                heading: num(4)?,
                speed: num(5)?,
                yaw_rate: num(6)?,
                progress: num(7)?,
            },
            input: [num(8)?, num(9)?, num(10)?],
            stage1_risk: num(11)?,
            collision: int(12)? != 0,
            status: parse_status(f[13]).ok_or_else(|| err(&format!("unknown solver status {:?}", f[13])))?,
            iterations: int(14)? as usize,
            kkt: num(15)?,
            violation: num(16)?,
            slack_used: int(17)? != 0,
            dynamics_residual: num(18)?,
            incidents: int(19)? as usize,
            support_violations: int(20)? as usize,
            max_support: int(21)? as usize,
            planning_ms: num(22)?,
            scenario_ms: num(23)?,
            polytope_ref: int(24)?,
            pedestrians,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutput {
    pub metrics: RunMetrics,
    pub rows: Vec<TraceRow>,
    /// CSV trace including header and outcome comments.
    pub trace: String,
    /// CSV of every stage polygon per cycle (empty unless enabled).
    pub polytopes: String,
}

fn header(config: &RunConfig, seed: u64, peds: usize) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "# config_hash={}", config.hash());
    let _ = writeln!(h, "# seed={seed}");
    let _ = writeln!(h, "# eps={}", config.risk.eps);
    let mut cols: Vec<String> = TRACE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..peds {
        cols.push(format!("ped{i}_x"));
        cols.push(format!("ped{i}_y"));
    }
    h.push_str(&cols.join(","));
    h.push('\n');
    h
}

fn dump_polytopes(out: &mut String, cycle: usize, sp: &SPInstance, env: &Environment, predictions: &[crate::uncertainty::ObstaclePrediction]) {
    for (k, stage) in sp.polytopes.iter().enumerate() {
        for (d, poly) in stage.iter().enumerate() {
            let verts: Vec<String> = poly.vertices.iter().map(|v| format!("{} {}", v.x, v.y)).collect();
            let support: Vec<String> = poly
                .edges
                .iter()
                .filter_map(|h| match h.origin {
                    Origin::Scenario { obstacle, index } => {
                        let o = predictions.iter().find(|o| o.id == obstacle)?;
                        let st = &o.stages[k];
                        let l = cholesky_factor(&st.covariance).ok()?;
                        let delta = l * env.batches[obstacle].samples[index] + st.mean;
                        Some(format!("{} {}", delta.x, delta.y))
                    }
                    Origin::Workspace(_) => None,
                })
                .collect();
            let _ = writeln!(out, "{cycle},{},{d},{},{}", k + 1, verts.join(";"), support.join(";"));
        }
    }
}

fn risk_seed(seed: u64, cycle: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (cycle as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Runs one closed-loop crossing episode.
pub fn run_episode(env: &Environment, config: &RunConfig, seed: u64) -> Result<EpisodeOutput, SimError> {
    let sim = &config.sim;
    let mpcc = &config.planner.mpcc;
    if sim.pedestrians > env.batches.len() {
        return Err(SimError::Config(format!(
            "{} pedestrians but only {} scenario batches",
            sim.pedestrians,
            env.batches.len()
        )));
    }
    let path = ReferencePath::straight(Point::zeros(), Point::new(sim.course_length, 0.0))
        .map_err(|e| SimError::Config(e.to_string()))?;
    let target_speed = mpcc.limits.path_speed_max.min(mpcc.limits.speed_max);
    let agents = crossing_scenario(config, seed, target_speed);
    let mut noise = PedestrianNoise::new(&agents, seed);
    let batches = &env.batches[..agents.len()];

    let mut state = RobotState {
        speed: target_speed,
        ..RobotState::default()
    };
    let mut rows = Vec::new();
    let mut trace = header(config, seed, agents.len());
    let mut polys = String::new();
    if sim.dump_polytopes {
        polys.push_str("cycle,stage,disc,vertices,support_samples\n");
    }
    let max_cycles = (sim.timeout / mpcc.control_period).ceil() as usize;
    let mut completed = None;

    // Startup plan, solved without a time budget before the clock starts, so
    // the first cycle is warm-started like every later one.
    let (mut prev, mut prev_sp): (Option<Trajectory>, Option<SPInstance>) = {
        let predictions: Vec<_> = agents.iter().map(|a| a.predict(0.0, mpcc.horizon, mpcc.dt)).collect();
        let sp = assemble_scenario_program(&state, None, None, &predictions, batches, &env.profile, &path, mpcc)?;
        let report = solve(&sp, None, f64::INFINITY, &config.planner.sqp);
        (Some(report.trajectory), Some(sp))
    };
    let disc_radius = mpcc.geometry.disc_radius;

    for cycle in 0..max_cycles {
        let t = cycle as f64 * mpcc.control_period;
        if state.pos.x >= sim.course_length {
            completed = Some(t);
            break;
        }
        state.progress = path.project(&state.pos);
        let truth = noise.positions(&agents, t);
        let discs: Vec<Point> = (0..mpcc.geometry.discs())
            .map(|d| mpcc.geometry.disc_center(&state.pos, state.heading, d))
            .collect();
        let collision = agents.iter().zip(&truth).any(|(a, p)| {
            discs.iter().any(|c| (c - p).norm() < disc_radius + a.radius)
        });

        let predictions: Vec<_> = agents.iter().map(|a| a.predict(t, mpcc.horizon, mpcc.dt)).collect();
        let started = Instant::now();
        let sp = assemble_scenario_program(
            &state,
            prev.as_ref(),
            prev_sp.as_ref(),
            &predictions,
            batches,
            &env.profile,
            &path,
            mpcc,
        )?;
        let scenario_ms = started.elapsed().as_secs_f64() * 1e3;
        let warm = prev.as_ref().map(|p| {
            let inputs = warm_start_inputs(p, mpcc.control_period, mpcc.dt);
            Trajectory {
                states: rollout(&state, &inputs, mpcc.dt, &mpcc.limits),
                inputs,
                stamp: cycle as u64,
            }
        });
        let report = solve(&sp, warm.as_ref(), config.planner.budget, &config.planner.sqp);
        let planning_ms = started.elapsed().as_secs_f64() * 1e3;

        let x1 = &report.trajectory.states[1];
        let x1_discs: Vec<Point> = (0..mpcc.geometry.discs())
            .map(|d| mpcc.geometry.disc_center(&x1.pos, x1.heading, d))
            .collect();
        let risk = first_stage_risk(&x1_discs, disc_radius, &predictions, sim.risk_samples, risk_seed(seed, cycle));

        let fallbacks = sp
            .incidents
            .iter()
            .filter(|i| matches!(i.kind, IncidentKind::SeedProjected | IncidentKind::PreviousPolytope | IncidentKind::WorkspaceOnly))
            .count();
        if sim.dump_polytopes {
            dump_polytopes(&mut polys, cycle, &sp, env, &predictions);
        }
        let u0 = report.trajectory.inputs[0];
        let row = TraceRow {
            cycle,
            time: t,
            state,
            input: [u0.accel, u0.yaw_accel, u0.path_speed],
            stage1_risk: risk,
            collision,
            status: report.status,
            iterations: report.iterations,
            kkt: report.kkt_residual,
            violation: report.max_constraint_violation,
            slack_used: report.slack_used,
            dynamics_residual: report.dynamics_residual,
            incidents: fallbacks,
            support_violations: sp.support_violations,
            max_support: sp.max_support,
            planning_ms,
            scenario_ms,
            polytope_ref: if sim.dump_polytopes { cycle as i64 } else { -1 },
            pedestrians: truth,
        };
        row.write_csv(&mut trace);
        rows.push(row);

        state = step_dynamics(&state, &u0, mpcc.control_period, &mpcc.limits);
        let mut plan = report.trajectory;
        plan.stamp = cycle as u64;
        prev = Some(plan);
        prev_sp = Some(sp);
    }
    let end_time = completed.unwrap_or(max_cycles as f64 * mpcc.control_period);
    let _ = writeln!(
        trace,
        "# outcome={},time={end_time}",
        if completed.is_some() { "completed" } else { "timeout" }
    );
    let metrics = metrics_from_rows(&rows, completed.is_some(), end_time, config.risk.eps);
    Ok(EpisodeOutput {
        metrics,
        rows,
        trace,
        polytopes: polys,
    })
}

pub fn metrics_from_rows(rows: &[TraceRow], completed: bool, end_time: f64, eps: f64) -> RunMetrics {
    let n = rows.len().max(1) as f64;
    let mut m = RunMetrics {
        completed,
        time_to_completion: end_time,
        cycles: rows.len(),
        ..RunMetrics::default()
    };
    for r in rows {
        m.max_first_stage_collision_prob = m.max_first_stage_collision_prob.max(r.stage1_risk);
        m.risk_violations += (r.stage1_risk > eps) as usize;
        m.planning_time_mean += r.planning_ms / n;
        m.planning_time_max = m.planning_time_max.max(r.planning_ms);
        m.scenario_time_mean += r.scenario_ms / n;
        m.scenario_time_max = m.scenario_time_max.max(r.scenario_ms);
        m.support_violations += r.support_violations;
        m.feasibility_incidents += (r.incidents > 0 || r.slack_used) as usize;
        m.collisions += r.collision as usize;
        m.unconverged_solves += (r.status != SolveStatus::Converged) as usize;
        m.max_dynamics_residual = m.max_dynamics_residual.max(r.dynamics_residual);
    }
    m
}

/// Parsed trace: rows plus the header and outcome annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub config_hash: String,
    pub seed: u64,
    pub eps: f64,
    pub rows: Vec<TraceRow>,
    pub completed: bool,
    pub end_time: f64,
}

pub fn parse_trace(text: &str) -> Result<ParsedTrace, SimError> {
    let mut out = ParsedTrace {
        config_hash: String::new(),
        seed: 0,
        eps: f64::NAN,
        rows: Vec::new(),
        completed: false,
        end_time: f64::NAN,
    };
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |m: String| SimError::Trace { line: line_no, message: m };
        if let Some(c) = line.strip_prefix("# ") {
            for kv in c.split(',') {
                let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("bad annotation {kv:?}")))?;
                match k {
                    "config_hash" => out.config_hash = v.to_string(),
                    "seed" => out.seed = v.parse().map_err(|_| err(format!("bad seed {v:?}")))?,
                    "eps" => out.eps = v.parse().map_err(|_| err(format!("bad eps {v:?}")))?,
                    "outcome" => out.completed = v == "completed",
                    "time" => out.end_time = v.parse().map_err(|_| err(format!("bad time {v:?}")))?,
                    _ => return Err(err(format!("unknown annotation {k:?}"))),
                }
            }
        } else if !saw_header {
            if !line.starts_with("cycle,") {
                return Err(err("missing column header".into()));
            }
            saw_header = true;
        } else if !line.trim().is_empty() {
            out.rows.push(TraceRow::parse(line, line_no)?);
        }
    }
    if !saw_header {
        return Err(SimError::Trace { line: 0, message: "empty trace".into() });
    }
    if out.end_time.is_nan() || out.eps.is_nan() {
        return Err(SimError::Trace { line: text.lines().count(), message: "trace has no outcome line".into() });
    }
    Ok(out)
}

/// Recomputes the run metrics from a persisted trace.
pub fn metrics_from_trace(text: &str) -> Result<RunMetrics, SimError> {
    let t = parse_trace(text)?;
    Ok(metrics_from_rows(&t.rows, t.completed, t.end_time, t.eps))
}

/// Trace text without the wall-clock columns, for determinism checks.
pub fn strip_timing(trace: &str) -> String {
    let drop: Vec<usize> = TRACE_COLUMNS
        .iter()
        .enumerate()
        .filter(|(_, c)| TIMING_COLUMNS.contains(c))
        .map(|(i, _)| i)
        .collect();
    trace
        .lines()
        .map(|l| {
            if l.starts_with('#') {
                return l.to_string();
            }
            l.split(',')
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, v)| v)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
