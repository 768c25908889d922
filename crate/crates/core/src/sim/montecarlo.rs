use crate::uncertainty::{cholesky_factor, ObstaclePrediction, StandardSampler};
use crate::Point;

/// Obstacles further than `r + FAR_SIGMAS * sigma_max` from every disc are
/// skipped; the Gaussian mass they could contribute is below 1e-13.
pub const FAR_SIGMAS: f64 = 8.0;

/// Fraction of `samples` joint draws of the obstacles' first-stage
/// positions in which some disc center lies within `disc_radius +
/// obstacle.radius` of some obstacle.
pub fn first_stage_risk(
    discs: &[Point],
    disc_radius: f64,
    obstacles: &[ObstaclePrediction],
    samples: usize,
    seed: u64,
) -> f64 {
    struct Near {
        sampler: StandardSampler,
        factor: nalgebra::Matrix2<f64>,
        mean: Point,
        reach_sq: f64,
    }
    let mut near: Vec<Near> = Vec::new();
    for o in obstacles {
        let st = &o.stages[0];
        let reach = disc_radius + o.radius;
        let sigma_max = st.covariance.symmetric_eigenvalues().max().max(0.0).sqrt();
        let cutoff = match o.truncation.max_radius() {
            Some(rho) => reach + rho * sigma_max,
            None => reach + FAR_SIGMAS * sigma_max,
        };
        if discs.iter().all(|d| (d - st.mean).norm() > cutoff) {
            continue;
        }
        near.push(Near {
            sampler: StandardSampler::with_stream(o.truncation, seed, o.id as u64).expect("validated truncation"),
            factor: cholesky_factor(&st.covariance).expect("validated covariance"),
            mean: st.mean,
            reach_sq: reach * reach,
        });
    }
    if near.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for _ in 0..samples {
        let mut hit = false;
        // Every obstacle draws each round so streams stay aligned.
        for n in near.iter_mut() {
            let delta = n.factor * n.sampler.draw() + n.mean;
            hit |= discs.iter().any(|d| (d - delta).norm_squared() <= n.reach_sq);
        }
        hits += hit as usize;
    }
    hits as f64 / samples as f64
}

/// Binomial standard error of a Monte-Carlo probability estimate.
pub fn standard_error(p: f64, samples: usize) -> f64 {
    (p * (1.0 - p) / samples as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::{Covariance, StagePrediction, TruncationSpec};

    fn obstacle(mean: Point, sigma: f64) -> ObstaclePrediction {
        ObstaclePrediction {
            id: 0,
            stages: vec![StagePrediction { mean, covariance: Covariance::identity() * sigma * sigma }],
            truncation: TruncationSpec::None,
            radius: 0.0,
        }
    }

    #[test]
    fn far_obstacle_has_no_risk() {
        let o = obstacle(Point::new(10.0, 0.0), 0.1);
        assert_eq!(first_stage_risk(&[Point::zeros()], 0.3, &[o], 100_000, 1), 0.0);
    }

    #[test]
    fn coincident_obstacle_is_certain() {
        let o = obstacle(Point::zeros(), 0.01);
        assert!(first_stage_risk(&[Point::zeros()], 0.3, &[o], 100_000, 1) > 0.9999);
    }

    /// Mass of N(0, sigma^2 I) in the disc of radius r centred at (d, 0),
    /// by composite Simpson in polar coordinates about the disc centre.
    fn disc_mass(d: f64, r: f64, sigma: f64) -> f64 {
        let (nr, na) = (400, 400);
        let simpson = |n: usize, i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let (hr, ha) = (r / nr as f64, std::f64::consts::TAU / na as f64);
        let mut acc = 0.0;
        for i in 0..=nr {
            let rho = i as f64 * hr;
            for j in 0..=na {
                let a = j as f64 * ha;
                let (x, y) = (d + rho * a.cos(), rho * a.sin());
                let dens = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp() / (std::f64::consts::TAU * sigma * sigma);
                acc += simpson(nr, i) * simpson(na, j) * dens * rho;
            }
        }
        acc * hr * ha / 9.0
    }

    #[test]
    fn quadrature_oracle_sanity() {
        // Disc centred on the mean: 1 - exp(-r^2 / 2 sigma^2).
        let m = disc_mass(0.0, 0.3, 0.1);
        assert!((m - (1.0 - (-4.5f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn matches_quadrature_at_threshold() {
        let (r, sigma) = (0.3, 0.1);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if disc_mass(mid, r, sigma) > 0.0111 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let d = 0.5 * (lo + hi);
        let exact = disc_mass(d, r, sigma);
        let o = obstacle(Point::new(d, 0.0), sigma);
        let m = 100_000;
        let est = first_stage_risk(&[Point::zeros()], r, &[o], m, 9);
        let se = standard_error(exact, m);
        assert!((est - exact).abs() <= 3.0 * se, "estimate {est}, exact {exact}, se {se}");
        assert!(se <= 5e-4);
    }

    #[test]
    fn any_of_two_obstacles() {
        let a = obstacle(Point::new(0.35, 0.0), 0.1);
        let mut b = obstacle(Point::new(-0.35, 0.0), 0.1);
        b.id = 1;
        let pa = first_stage_risk(&[Point::zeros()], 0.3, std::slice::from_ref(&a), 100_000, 3);
        let pb = first_stage_risk(&[Point::zeros()], 0.3, std::slice::from_ref(&b), 100_000, 3);
        let both = first_stage_risk(&[Point::zeros()], 0.3, &[a, b], 100_000, 3);
        let union = pa + pb - pa * pb;
        assert!((both - union).abs() < 4.0 * standard_error(union, 100_000) + 1e-3);
    }
}
