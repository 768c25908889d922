use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::episode::{run_episode, EpisodeOutput, RunMetrics};
use super::{Environment, SimError};
use crate::config::RunConfig;

/// Runs one episode per seed on `jobs` worker threads. `on_episode` sees
/// each finished episode (in completion order); the result is in seed order.
pub fn run_sweep<F>(
    env: &Environment,
    config: &RunConfig,
    seeds: &[u64],
    jobs: usize,
    on_episode: F,
) -> Result<Vec<(u64, RunMetrics)>, SimError>
where
    F: Fn(u64, &EpisodeOutput) -> Result<(), SimError> + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunMetrics, SimError>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(seeds.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = run_episode(env, config, seeds[i]).and_then(|out| {
                    on_episode(seeds[i], &out)?;
                    Ok(out.metrics)
                });
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .zip(seeds)
        .map(|(r, &s)| r.expect("every seed ran").map(|m| (s, m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pedestrians: usize,
    pub episodes: usize,
    pub completed: usize,
    pub max_risk: f64,
    pub risk_violations: usize,
    pub collisions: usize,
    pub completion_mean: f64,
    pub completion_std: f64,
    pub planning_mean_ms: f64,
    pub planning_max_ms: f64,
    pub support_violations: usize,
    pub feasibility_incidents: usize,
    pub unconverged_solves: usize,
}

pub const SWEEP_COLUMNS: &[&str] = &[
    "pedestrians", "episodes", "completed", "max_risk", "risk_violations", "collisions", "completion_mean",
    "completion_std", "planning_mean_ms", "planning_max_ms", "support_violations", "feasibility_incidents",
    "unconverged_solves",
];

/// Completion statistics cover completed episodes only; timing is
/// cycle-weighted across all episodes.
pub fn aggregate_sweep(pedestrians: usize, runs: &[RunMetrics]) -> SweepRow {
    let done: Vec<f64> = runs.iter().filter(|m| m.completed).map(|m| m.time_to_completion).collect();
    let mean = done.iter().sum::<f64>() / done.len().max(1) as f64;
    let var = if done.len() > 1 {
        done.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (done.len() - 1) as f64
    } else {
        0.0
    };
    let cycles: usize = runs.iter().map(|m| m.cycles).sum();
    let planning_total: f64 = runs.iter().map(|m| m.planning_time_mean * m.cycles as f64).sum();
    SweepRow {
        pedestrians,
        episodes: runs.len(),
        completed: done.len(),
        max_risk: runs.iter().map(|m| m.max_first_stage_collision_prob).fold(0.0, f64::max),
        risk_violations: runs.iter().map(|m| m.risk_violations).sum(),
        collisions: runs.iter().map(|m| m.collisions).sum(),
        completion_mean: if done.is_empty() { f64::NAN } else { mean },
        completion_std: var.sqrt(),
        planning_mean_ms: planning_total / cycles.max(1) as f64,
        planning_max_ms: runs.iter().map(|m| m.planning_time_max).fold(0.0, f64::max),
        support_violations: runs.iter().map(|m| m.support_violations).sum(),
        feasibility_incidents: runs.iter().map(|m| m.feasibility_incidents).sum(),
        unconverged_solves: runs.iter().map(|m| m.unconverged_solves).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_hash={}\n{}\n", self.config_hash, SWEEP_COLUMNS.join(","));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3},{},{},{}",
                r.pedestrians,
                r.episodes,
                r.completed,
                r.max_risk,
                r.risk_violations,
                r.collisions,
                r.completion_mean,
                r.completion_std,
                r.planning_mean_ms,
                r.planning_max_ms,
                r.support_violations,
                r.feasibility_incidents,
                r.unconverged_solves,
            );
        }
        out
    }

    /// True when no row records a collision, risk violation or support violation.
    pub fn is_clean(&self) -> bool {
        self.rows.iter().all(|r| r.collisions == 0 && r.risk_violations == 0 && r.support_violations == 0)
    }
}
