use std::cmp::Ordering;

use log::warn;

use crate::Point;

fn by_distance<'a>(scenarios: &'a [Point], target: &Point) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    let target = *target;
    move |&a, &b| {
        let da = (scenarios[a] - target).norm_squared();
        let db = (scenarios[b] - target).norm_squared();
        da.total_cmp(&db).then(a.cmp(&b))
    }
}

/// Indices of the `count` scenarios closest to `x_hat`, ascending by index.
/// Distance ties go to the lower index.
pub fn select_nearest(scenarios: &[Point], x_hat: &Point, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scenarios.len()).collect();
    if count >= scenarios.len() {
        if count > scenarios.len() {
            warn!(
                "select_nearest: asked for {count} scenarios but only {} exist",
                scenarios.len()
            );
        }
        return idx;
    }
    if count == 0 {
        return Vec::new();
    }
    let cmp = by_distance(scenarios, x_hat);
    idx.select_nth_unstable_by(count - 1, &cmp);
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

/// Drops the `discard` entries of `selected` furthest from `mean`; the rest
/// keep their input order.
pub fn discard_outliers(
    selected: &[usize],
    scenarios: &[Point],
    mean: &Point,
    discard: usize,
) -> Vec<usize> {
    if discard == 0 {
        return selected.to_vec();
    }
    if discard >= selected.len() {
        return Vec::new();
    }
    let keep = selected.len() - discard;
    let mut ranked = selected.to_vec();
    let cmp = by_distance(scenarios, mean);
    ranked.select_nth_unstable_by(keep - 1, &cmp);
    let mut dropped: Vec<usize> = ranked[keep..].to_vec();
    dropped.sort_unstable();
    selected
        .iter()
        .copied()
        .filter(|i| dropped.binary_search(i).is_err())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sort_oracle(scenarios: &[Point], x: &Point, count: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = scenarios
            .iter()
            .enumerate()
            .map(|(i, s)| ((s - x).norm(), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut out: Vec<usize> = all.into_iter().take(count).map(|(_, i)| i).collect();
        out.sort_unstable();
        out
    }

    #[test]
    fn count_equal_to_len_is_identity() {
        let pts: Vec<Point> = (0..7).map(|i| Point::new(7.0 - i as f64, 0.3)).collect();
        assert_eq!(select_nearest(&pts, &Point::zeros(), 7), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn line_of_scenarios() {
        let pts: Vec<Point> = (1..=10).map(|d| Point::new(d as f64, 0.0)).collect();
        assert_eq!(select_nearest(&pts, &Point::zeros(), 3), vec![0, 1, 2]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let pts = vec![
            Point::new(0.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(-1.0, 0.0),
            Point::new(0.0, -1.0),
        ];
        assert_eq!(select_nearest(&pts, &Point::zeros(), 2), vec![0, 1]);
    }

    #[test]
    fn more_requested_than_available() {
        let pts = vec![Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        assert_eq!(select_nearest(&pts, &Point::zeros(), 5), vec![0, 1]);
    }

    #[test]
    fn matches_full_sort_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let n = rng.gen_range(1..40);
            let pts: Vec<Point> = (0..n)
                .map(|_| Point::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let x = Point::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            let count = rng.gen_range(0..=n);
            assert_eq!(select_nearest(&pts, &x, count), sort_oracle(&pts, &x, count));
        }
    }

    #[test]
    fn discard_zero_is_noop() {
        let pts: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 0.0)).collect();
        let sel = vec![4, 1, 3];
        assert_eq!(discard_outliers(&sel, &pts, &Point::zeros(), 0), sel);
    }

    #[test]
    fn far_outliers_removed() {
        let mut pts: Vec<Point> = (0..24)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 24.0;
                Point::new(a.cos(), a.sin())
            })
            .collect();
        pts.push(Point::new(9.0, 0.0));
        pts.insert(5, Point::new(0.0, -7.0));
        let sel: Vec<usize> = (0..pts.len()).collect();
        let kept = discard_outliers(&sel, &pts, &Point::zeros(), 2);
        assert_eq!(kept.len(), 24);
        assert!(!kept.contains(&5));
        assert!(!kept.contains(&25));
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn discard_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let n = rng.gen_range(2..50);
            let pts: Vec<Point> = (0..n)
                .map(|_| Point::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let mut sel: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.7)).collect();
            if sel.len() < 2 {
                sel = vec![0, 1];
            }
            let mean = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let r = rng.gen_range(0..sel.len());
            let got = discard_outliers(&sel, &pts, &mean, r);

            let mut ranked: Vec<(f64, usize)> =
                sel.iter().map(|&i| ((pts[i] - mean).norm(), i)).collect();
            ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let kept: Vec<usize> = ranked[..sel.len() - r].iter().map(|p| p.1).collect();
            let want: Vec<usize> = sel.iter().copied().filter(|i| kept.contains(i)).collect();
            assert_eq!(got, want);
        }
    }
}
