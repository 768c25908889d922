//! Run configuration shared by every command.

use std::path::{Path, PathBuf};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mpcc::MpccConfig;
use crate::risk::{RiskError, RiskProfile};
use crate::solver::SqpSettings;
use crate::uncertainty::{cholesky_factor, Covariance, SweepGrid, TruncationSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub eps: f64,
    pub beta: f64,
    pub s_bar: usize,
    pub discard: usize,
    pub keep: usize,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            eps: 0.0111,
            beta: 1e-6,
            s_bar: 20,
            discard: 50,
            keep: 150,
        }
    }
}

impl RiskConfig {
    pub fn profile(&self) -> Result<RiskProfile, RiskError> {
        RiskProfile::derive(self.eps, self.beta, self.s_bar, self.discard, self.keep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyConfig {
    /// Isotropic standard deviation of every pedestrian position (m).
    pub sigma: f64,
    /// Full covariance; overrides `sigma` when present.
    pub covariance: Option<[[f64; 2]; 2]>,
    pub truncation: TruncationSpec,
    /// Seed of the offline batches; batch `i` uses `batch_seed + i`.
    pub batch_seed: u64,
    pub sweep: SweepGrid,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            covariance: None,
            truncation: TruncationSpec::None,
            batch_seed: 1,
            sweep: SweepGrid::default(),
        }
    }
}

impl UncertaintyConfig {
    pub fn covariance(&self) -> Covariance {
        match self.covariance {
            Some(c) => Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]),
            None => Covariance::identity() * (self.sigma * self.sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Budget of one solve, in planner-thread CPU time (s).
    pub budget: f64,
    pub mpcc: MpccConfig,
    pub sqp: SqpSettings,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            budget: 0.1,
            mpcc: MpccConfig::default(),
            sqp: SqpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub pedestrians: usize,
    /// Straight road from the origin along +x (m).
    pub course_length: f64,
    pub pedestrian_radius: f64,
    pub pedestrian_speed: [f64; 2],
    /// Crossing times are jittered uniformly by up to this much (s).
    pub crossing_jitter: f64,
    /// Episode timeout (s).
    pub timeout: f64,
    /// Monte-Carlo draws per first-stage risk estimate.
    pub risk_samples: usize,
    /// First episode seed and number of seeds in a sweep.
    pub seed: u64,
    pub seeds: usize,
    pub dump_polytopes: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            pedestrians: 6,
            course_length: 12.0,
            pedestrian_radius: 0.0,
            pedestrian_speed: [0.8, 1.4],
            crossing_jitter: 1.5,
            timeout: 30.0,
            risk_samples: 100_000,
            seed: 0,
            seeds: 100,
            dump_polytopes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub risk: RiskConfig,
    pub uncertainty: UncertaintyConfig,
    pub planner: PlannerConfig,
    pub sim: SimConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let r = &self.risk;
        if !(r.eps > 0.0 && r.eps < 1.0 && r.beta > 0.0 && r.beta < 1.0) {
            return bad(format!("eps and beta must lie in (0, 1), got {} and {}", r.eps, r.beta));
        }
        if r.s_bar == 0 || r.keep < r.s_bar {
            return bad(format!("need 1 <= s_bar <= keep, got s_bar {} keep {}", r.s_bar, r.keep));
        }
        let u = &self.uncertainty;
        if u.covariance.is_none() && !(u.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", u.sigma));
        }
        cholesky_factor(&u.covariance()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        u.truncation.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if u.sweep.directions == 0 || u.sweep.radii.is_empty() {
            return bad("prune sweep grid is empty".into());
        }
        let m = &self.planner.mpcc;
        if !(m.dt > 0.0 && m.control_period > 0.0) || m.horizon == 0 {
            return bad("dt, control_period and horizon must be positive".into());
        }
        if m.geometry.disc_offsets.is_empty() || !(m.geometry.disc_radius >= 0.0) {
            return bad("vehicle needs at least one disc with nonnegative radius".into());
        }
        let l = &m.limits;
        if !(l.speed_min <= l.speed_max && l.accel_max > 0.0 && l.yaw_accel_max > 0.0 && l.path_speed_max > 0.0) {
            return bad("inconsistent vehicle limits".into());
        }
        if !(self.planner.budget > 0.0) {
            return bad("solver budget must be positive".into());
        }
        let s = &self.sim;
        if !(s.course_length > 0.0 && s.timeout > 0.0) {
            return bad("course length and timeout must be positive".into());
        }
        let [lo, hi] = s.pedestrian_speed;
        if !(0.0 < lo && lo <= hi && hi <= 2.0) {
            return bad(format!("pedestrian speeds must satisfy 0 < min <= max <= 2, got [{lo}, {hi}]"));
        }
        if s.risk_samples < 10_000 {
            return bad(format!("risk_samples must be at least 10^4, got {}", s.risk_samples));
        }
        if !(s.pedestrian_radius >= 0.0) {
            return bad("pedestrian radius must be nonnegative".into());
        }
        Ok(())
    }
}
