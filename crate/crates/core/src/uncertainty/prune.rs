use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{SamplingError, ScenarioBatch};
use crate::geometry::{discard_outliers, select_nearest};
use crate::risk::RiskProfile;
use crate::Point;

/// Polar grid of linearization points in standard coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub directions: usize,
    /// Radii in sigma multiples.
    pub radii: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self::evenly_spaced(64, 8, 3.0, 10.0)
    }
}

impl SweepGrid {
    pub fn evenly_spaced(directions: usize, rings: usize, inner: f64, outer: f64) -> Self {
        let radii = match rings {
            0 => Vec::new(),
            1 => vec![inner],
            n => (0..n)
                .map(|i| inner + (outer - inner) * i as f64 / (n - 1) as f64)
                .collect(),
        };
        Self { directions, radii }
    }

    pub fn points(&self) -> Vec<Point> {
        let mut pts = Vec::with_capacity(self.directions * self.radii.len());
        for &r in &self.radii {
            for d in 0..self.directions {
                let a = std::f64::consts::TAU * d as f64 / self.directions as f64;
                pts.push(Point::new(r * a.cos(), r * a.sin()));
            }
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub total: usize,
    pub relevant: usize,
    pub pruned_fraction: f64,
    pub sweep_points: usize,
    /// Sweep points skipped because a sample coincides with them.
    pub skipped: Vec<usize>,
    /// For each relevant index, the first sweep point that selected it.
    pub generator: BTreeMap<usize, usize>,
}

/// Keeps only samples that some sweep point selects into its kept set
/// (nearest `keep + discard`, minus the `discard` furthest from the origin).
pub fn offline_prune(
    batch: &ScenarioBatch,
    sweep: &[Point],
    profile: &RiskProfile,
) -> Result<(ScenarioBatch, PruneReport), SamplingError> {
    if sweep.is_empty() {
        return Err(SamplingError::InvalidArgument("prune sweep is empty".into()));
    }
    let origin = Point::zeros();
    let mut generator = BTreeMap::new();
    let mut skipped = Vec::new();
    for (k, p) in sweep.iter().enumerate() {
        if batch.samples.iter().any(|z| (z - p).norm() < 1e-12) {
            warn!("prune sweep point {k} at ({}, {}) coincides with a sample; skipped", p.x, p.y);
            skipped.push(k);
            continue;
        }
        for i in kept_set(&batch.samples, p, profile, &origin) {
            generator.entry(i).or_insert(k);
        }
    }
    let relevant: Vec<usize> = generator.keys().copied().collect();
    let total = batch.samples.len();
    let report = PruneReport {
        total,
        relevant: relevant.len(),
        pruned_fraction: 1.0 - relevant.len() as f64 / total as f64,
        sweep_points: sweep.len(),
        skipped,
        generator,
    };
    let pruned = ScenarioBatch {
        relevant,
        ..batch.clone()
    };
    Ok((pruned, report))
}

/// Selection as done online, in standard coordinates.
pub(crate) fn kept_set(samples: &[Point], seed: &Point, profile: &RiskProfile, mean: &Point) -> Vec<usize> {
    let nearest = select_nearest(samples, seed, profile.keep + profile.discard);
    discard_outliers(&nearest, samples, mean, profile.discard)
}
