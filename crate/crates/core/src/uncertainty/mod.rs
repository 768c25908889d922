//! Offline standard sample batches, their online transformation to obstacle
//! predictions, and offline relevance pruning.

mod archive;
mod prune;

pub use archive::{read_batch, read_batch_file, write_batch, write_batch_file, ArchiveError, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use prune::{offline_prune, PruneReport, SweepGrid};

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::Point;

/// Width truncation refuses specs whose acceptance rate would fall below this.
pub const MIN_ACCEPTANCE_RATE: f64 = 1e-3;

pub type Covariance = Matrix2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration rejected: {0}")]
    Config(String),
    #[error("covariance is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
}

/// Support restriction of the standard bivariate normal, in units of sigma.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TruncationSpec {
    #[default]
    None,
    /// Samples restricted to the disc of radius `rho`.
    Radial { rho: f64 },
    /// Component along the unit vector `axis` restricted to `[-rho, rho]`.
    Width { axis: [f64; 2], rho: f64 },
}

impl TruncationSpec {
    pub fn validate(&self) -> Result<(), SamplingError> {
        match *self {
            TruncationSpec::None => Ok(()),
            TruncationSpec::Radial { rho } => check_rho(rho),
            TruncationSpec::Width { axis, rho } => {
                check_rho(rho)?;
                let norm = Point::from(axis).norm();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(SamplingError::InvalidArgument(format!(
                        "width-truncation axis must be a unit vector, norm is {norm}"
                    )));
                }
                let acceptance = erf(rho / std::f64::consts::SQRT_2);
                if acceptance < MIN_ACCEPTANCE_RATE {
                    return Err(SamplingError::Config(format!(
                        "width truncation at rho = {rho} accepts only {acceptance:.2e} of draws"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Radius beyond which no standard sample can lie, if bounded.
    pub fn max_radius(&self) -> Option<f64> {
        match *self {
            TruncationSpec::Radial { rho } => Some(rho),
            _ => None,
        }
    }
}

fn check_rho(rho: f64) -> Result<(), SamplingError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(SamplingError::InvalidArgument(format!(
            "truncation rho must be positive, got {rho}"
        )));
    }
    Ok(())
}

/// Box-Muller transform of `u1 in (0, 1]`, `u2 in [0, 1)` into a standard
/// bivariate normal sample.
pub fn box_muller(u1: f64, u2: f64) -> Result<Point, SamplingError> {
    if !(u1 > 0.0 && u1 <= 1.0) {
        return Err(SamplingError::InvalidArgument(format!("u1 = {u1} outside (0, 1]")));
    }
    if !(0.0..1.0).contains(&u2) {
        return Err(SamplingError::InvalidArgument(format!("u2 = {u2} outside [0, 1)")));
    }
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    Ok(Point::new(radius * angle.cos(), radius * angle.sin()))
}

/// Draws standard (optionally truncated) bivariate normal samples.
#[derive(Debug, Clone)]
pub struct StandardSampler {
    rng: ChaCha8Rng,
    truncation: TruncationSpec,
    /// Lower end of the support of `u1`; `exp(-rho^2 / 2)` under radial truncation.
    u1_floor: f64,
}

impl StandardSampler {
    pub fn new(truncation: TruncationSpec, seed: u64) -> Result<Self, SamplingError> {
        Self::with_stream(truncation, seed, 0)
    }

    pub fn with_stream(truncation: TruncationSpec, seed: u64, stream: u64) -> Result<Self, SamplingError> {
        truncation.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let u1_floor = match truncation {
            TruncationSpec::Radial { rho } => (-rho * rho / 2.0).exp(),
            _ => 0.0,
        };
        Ok(Self {
            rng,
            truncation,
            u1_floor,
        })
    }

    fn draw_untruncated(&mut self) -> Point {
        let v1: f64 = self.rng.gen();
        let u2: f64 = self.rng.gen();
        // u1 uniform on (floor, 1]
        let u1 = (1.0 - v1 * (1.0 - self.u1_floor)).max(self.u1_floor).max(f64::MIN_POSITIVE);
        let mut radius = (-2.0 * u1.ln()).sqrt();
        if let TruncationSpec::Radial { rho } = self.truncation {
            radius = radius.min(rho);
        }
        let angle = std::f64::consts::TAU * u2;
        Point::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn draw(&mut self) -> Point {
        match self.truncation {
            TruncationSpec::Width { axis, rho } => {
                let axis = Point::from(axis);
                loop {
                    let z = self.draw_untruncated();
                    if z.dot(&axis).abs() <= rho {
                        return z;
                    }
                }
            }
            _ => self.draw_untruncated(),
        }
    }
}

/// Standard-scale samples shared by every stage and cycle of one obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBatch {
    pub samples: Vec<Point>,
    /// Ascending indices into `samples` that survived offline pruning.
    pub relevant: Vec<usize>,
    pub truncation: TruncationSpec,
    pub seed: u64,
}

impl ScenarioBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn relevant_samples(&self) -> Vec<Point> {
        self.relevant.iter().map(|&i| self.samples[i]).collect()
    }

    pub fn pruned_fraction(&self) -> f64 {
        1.0 - self.relevant.len() as f64 / self.samples.len() as f64
    }
}

pub fn sample_standard_batch(
    count: usize,
    truncation: TruncationSpec,
    seed: u64,
) -> Result<ScenarioBatch, SamplingError> {
    if count == 0 {
        return Err(SamplingError::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut sampler = StandardSampler::new(truncation, seed)?;
    let samples = (0..count).map(|_| sampler.draw()).collect();
    Ok(ScenarioBatch {
        samples,
        relevant: (0..count).collect(),
        truncation,
        seed,
    })
}

/// Lower-triangular `L` with `L L^T = sigma`.
pub fn cholesky_factor(sigma: &Covariance) -> Result<Matrix2<f64>, SamplingError> {
    let asym = (sigma[(0, 1)] - sigma[(1, 0)]).abs();
    if asym > 1e-12 * (1.0 + sigma.abs().max()) {
        return Err(SamplingError::NotPositiveDefinite(format!("asymmetric by {asym:e}")));
    }
    sigma
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| SamplingError::NotPositiveDefinite(format!("{sigma:?}")))
}

/// `delta = L z + mu` for each standard sample `z`.
pub fn transform_samples(samples: &[Point], mean: &Point, factor: &Matrix2<f64>) -> Vec<Point> {
    samples.iter().map(|z| factor * z + mean).collect()
}

/// Transforms every sample of `batch` to the distribution `N(mean, sigma)`.
pub fn transform_batch(
    batch: &ScenarioBatch,
    mean: &Point,
    sigma: &Covariance,
) -> Result<Vec<Point>, SamplingError> {
    let l = cholesky_factor(sigma)?;
    Ok(transform_samples(&batch.samples, mean, &l))
}

/// Model distribution of one obstacle at one prediction stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePrediction {
    pub mean: Point,
    pub covariance: Covariance,
}

/// Per-stage predictions of one obstacle over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstaclePrediction {
    pub id: usize,
    pub stages: Vec<StagePrediction>,
    pub truncation: TruncationSpec,
    pub radius: f64,
}

impl ObstaclePrediction {
    pub fn validate(&self, horizon: usize) -> Result<(), SamplingError> {
        if self.stages.len() != horizon {
            return Err(SamplingError::InvalidArgument(format!(
                "obstacle {} has {} stages, expected {horizon}",
                self.id,
                self.stages.len()
            )));
        }
        for s in &self.stages {
            cholesky_factor(&s.covariance)?;
        }
        self.truncation.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Point,
    pub covariance: Covariance,
}

/// Mixture of Gaussians over the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: Vec<MixtureComponent>,
}

impl MixtureModel {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.components.is_empty() {
            return Err(SamplingError::InvalidArgument("mixture has no components".into()));
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight >= 0.0 && c.weight <= 1.0) {
                return Err(SamplingError::InvalidArgument(format!("weight {} outside [0, 1]", c.weight)));
            }
            cholesky_factor(&c.covariance)?;
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(SamplingError::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Component picked by weight, then a Gaussian draw from it.
///
/// Component choice uses its own RNG stream, so a one-component mixture
/// reproduces `transform_batch` of `sample_standard_batch(count, None, seed)`.
pub fn sample_mixture(model: &MixtureModel, count: usize, seed: u64) -> Result<Vec<Point>, SamplingError> {
    model.validate()?;
    let factors = model
        .components
        .iter()
        .map(|c| cholesky_factor(&c.covariance))
        .collect::<Result<Vec<_>, _>>()?;
    let mut gauss = StandardSampler::new(TruncationSpec::None, seed)?;
    let mut picker = ChaCha8Rng::seed_from_u64(seed);
    picker.set_stream(1);
    let last_live = model.components.iter().rposition(|c| c.weight > 0.0).unwrap_or(0);

    Ok((0..count)
        .map(|_| {
            let u: f64 = picker.gen();
            let mut acc = 0.0;
            let mut pick = last_live;
            for (i, c) in model.components.iter().enumerate() {
                acc += c.weight;
                if c.weight > 0.0 && u < acc {
                    pick = i;
                    break;
                }
            }
            let z = gauss.draw();
            factors[pick] * z + model.components[pick].mean
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn box_muller_hand_values() {
        let z = box_muller(1.0, 0.37).unwrap();
        assert_eq!(z, Point::zeros());
        let z = box_muller((-2.0f64).exp(), 0.0).unwrap();
        assert_relative_eq!(z, Point::new(2.0, 0.0), epsilon = 1e-12);
        let z = box_muller((-2.0f64).exp(), 0.25).unwrap();
        assert_relative_eq!(z, Point::new(0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn box_muller_rejects_zero() {
        assert!(box_muller(0.0, 0.5).is_err());
        assert!(box_muller(0.5, 1.0).is_err());
    }

    #[test]
    fn radial_truncation_bounds_norm() {
        let b = sample_standard_batch(50_000, TruncationSpec::Radial { rho: 3.5 }, 1).unwrap();
        assert!(b.samples.iter().all(|z| z.norm() <= 3.5));
        let b = sample_standard_batch(50_000, TruncationSpec::Radial { rho: 0.5 }, 2).unwrap();
        assert!(b.samples.iter().all(|z| z.norm() <= 0.5));
    }

    #[test]
    fn width_truncation_bounds_component() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let spec = TruncationSpec::Width { axis: [s, s], rho: 0.7 };
        let b = sample_standard_batch(20_000, spec, 4).unwrap();
        assert!(b.samples.iter().all(|z| (z.x * s + z.y * s).abs() <= 0.7));
    }

    #[test]
    fn truncation_validation() {
        assert!(TruncationSpec::Radial { rho: 0.0 }.validate().is_err());
        assert!(TruncationSpec::Width { axis: [1.0, 1.0], rho: 2.0 }.validate().is_err());
        assert!(matches!(
            TruncationSpec::Width { axis: [1.0, 0.0], rho: 1e-4 }.validate(),
            Err(SamplingError::Config(_))
        ));
        assert!(TruncationSpec::Width { axis: [0.0, 1.0], rho: 2.5 }.validate().is_ok());
    }

    #[test]
    fn same_seed_same_batch() {
        let a = sample_standard_batch(1000, TruncationSpec::Radial { rho: 2.0 }, 99).unwrap();
        let b = sample_standard_batch(1000, TruncationSpec::Radial { rho: 2.0 }, 99).unwrap();
        let bits = |b: &ScenarioBatch| b.samples.iter().flat_map(|p| [p.x.to_bits(), p.y.to_bits()]).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = sample_standard_batch(1000, TruncationSpec::Radial { rho: 2.0 }, 100).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn identity_transform() {
        let b = sample_standard_batch(100, TruncationSpec::None, 5).unwrap();
        let t = transform_batch(&b, &Point::zeros(), &Covariance::identity()).unwrap();
        assert_eq!(t, b.samples);
    }

    #[test]
    fn diagonal_transform_hand_value() {
        let b = ScenarioBatch {
            samples: vec![Point::new(1.0, 0.0)],
            relevant: vec![0],
            truncation: TruncationSpec::None,
            seed: 0,
        };
        let t = transform_batch(&b, &Point::new(3.0, 4.0), &Covariance::new(4.0, 0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(t[0], Point::new(5.0, 4.0), epsilon = 1e-15);
    }

    #[test]
    fn non_spd_rejected() {
        assert!(cholesky_factor(&Covariance::new(1.0, 2.0, 2.0, 1.0)).is_err());
        assert!(cholesky_factor(&Covariance::new(1.0, 0.1, 0.0, 1.0)).is_err());
    }

    #[test]
    fn isotropic_transform_preserves_projection_order() {
        let b = sample_standard_batch(500, TruncationSpec::None, 6).unwrap();
        let dir = Point::new(0.6, -0.8);
        let t = transform_batch(&b, &Point::new(-2.0, 7.0), &(Covariance::identity() * 0.09)).unwrap();
        let mut order_a: Vec<usize> = (0..500).collect();
        let mut order_b = order_a.clone();
        order_a.sort_by(|&i, &j| b.samples[i].dot(&dir).total_cmp(&b.samples[j].dot(&dir)));
        order_b.sort_by(|&i, &j| t[i].dot(&dir).total_cmp(&t[j].dot(&dir)));
        assert_eq!(order_a, order_b);
    }

    fn comp(weight: f64, x: f64) -> MixtureComponent {
        MixtureComponent {
            weight,
            mean: Point::new(x, 0.0),
            covariance: Covariance::identity() * 0.01,
        }
    }

    #[test]
    fn single_component_mixture_matches_batch_transform() {
        let cov = Covariance::new(0.5, 0.1, 0.1, 0.3);
        let model = MixtureModel {
            components: vec![MixtureComponent { weight: 1.0, mean: Point::new(1.0, -1.0), covariance: cov }],
        };
        let m = sample_mixture(&model, 256, 42).unwrap();
        let b = sample_standard_batch(256, TruncationSpec::None, 42).unwrap();
        let t = transform_batch(&b, &Point::new(1.0, -1.0), &cov).unwrap();
        assert_eq!(m, t);
    }

    #[test]
    fn mixture_proportions() {
        let model = MixtureModel { components: vec![comp(0.5, -5.0), comp(0.5, 5.0)] };
        let s = sample_mixture(&model, 100_000, 7).unwrap();
        let right = s.iter().filter(|p| p.x > 0.0).count() as f64 / 1e5;
        assert!((right - 0.5).abs() < 0.01, "right fraction {right}");
    }

    #[test]
    fn zero_weight_component_never_sampled() {
        let model = MixtureModel { components: vec![comp(0.0, -5.0), comp(1.0, 5.0), comp(0.0, 50.0)] };
        let s = sample_mixture(&model, 20_000, 8).unwrap();
        assert!(s.iter().all(|p| p.x > 0.0 && p.x < 20.0));
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let model = MixtureModel { components: vec![comp(0.5, 0.0), comp(0.4, 1.0)] };
        assert!(sample_mixture(&model, 10, 0).is_err());
    }
}
