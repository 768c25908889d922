//! Closed-loop crossing simulations and their metrics.

mod episode;
mod montecarlo;
mod sweep;
mod world;

pub use episode::{
    metrics_from_rows, metrics_from_trace, parse_trace, run_episode, strip_timing, EpisodeOutput, ParsedTrace,
    RunMetrics, TraceRow, TIMING_COLUMNS, TRACE_COLUMNS,
};
pub use montecarlo::{first_stage_risk, standard_error, FAR_SIGMAS};
pub use sweep::{aggregate_sweep, run_sweep, SweepRow, SweepSummary, SWEEP_COLUMNS};
pub use world::{crossing_scenario, Motion, PedestrianAgent, PedestrianNoise, MAX_PEDESTRIAN_SPEED};

use thiserror::Error;

use crate::config::RunConfig;
use crate::mpcc::ProgramError;
use crate::risk::{RiskError, RiskProfile};
use crate::uncertainty::{offline_prune, sample_standard_batch, PruneReport, SamplingError, ScenarioBatch};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// Offline state shared by every episode of one configuration: the risk
/// profile and one pruned scenario batch per pedestrian slot.
#[derive(Debug, Clone)]
pub struct Environment {
    pub profile: RiskProfile,
    pub batches: Vec<ScenarioBatch>,
    pub reports: Vec<PruneReport>,
}

impl Environment {
    /// Samples and prunes `slots` batches, batch `i` seeded `batch_seed + i`.
    pub fn prepare(config: &RunConfig, slots: usize) -> Result<Self, SimError> {
        let profile = config.risk.profile()?;
        let sweep = config.uncertainty.sweep.points();
        let mut batches = Vec::with_capacity(slots);
        let mut reports = Vec::with_capacity(slots);
        for i in 0..slots {
            let seed = config.uncertainty.batch_seed.wrapping_add(i as u64);
            let raw = sample_standard_batch(profile.sample_size, config.uncertainty.truncation, seed)?;
            let (pruned, report) = offline_prune(&raw, &sweep, &profile)?;
            batches.push(pruned);
            reports.push(report);
        }
        Ok(Self { profile, batches, reports })
    }

    pub fn from_batches(profile: RiskProfile, batches: Vec<ScenarioBatch>) -> Self {
        Self { profile, batches, reports: Vec::new() }
    }
}
