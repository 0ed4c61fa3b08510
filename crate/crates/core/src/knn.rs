//! k-nearest-neighbour estimators on 2-D points: Kozachenko–Leonenko
//! differential entropy and the Wang–Kulkarni–Verdú KL divergence.

use statrs::function::gamma::digamma;

use crate::error::{contract, Error, Result};

pub const DEFAULT_K: usize = 3;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Points sorted by `x`, for sweep-style neighbour queries.
struct SortedPoints {
    pts: Vec<[f64; 2]>,
}

impl SortedPoints {
    fn new(points: &[[f64; 2]]) -> Self {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        Self { pts }
    }

    /// Distance from `q` to its k-th nearest point, skipping one exact copy
    /// of `q` itself when `exclude_self`.
    fn kth(&self, q: [f64; 2], k: usize, exclude_self: bool) -> f64 {
        let start = self.pts.partition_point(|p| p[0] < q[0]);
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        let mut skipped = !exclude_self;
        let push = |d: f64, best: &mut Vec<f64>| {
            let pos = best.partition_point(|&b| b <= d);
            if pos < k {
                best.insert(pos, d);
                best.truncate(k);
            }
        };
        let bound = |best: &Vec<f64>| {
            if best.len() < k {
                f64::INFINITY
            } else {
                best[k - 1]
            }
        };
        let (mut lo, mut hi) = (start, start);
        loop {
            let r = bound(&best);
            let left_ok = lo > 0 && q[0] - self.pts[lo - 1][0] <= r;
            let right_ok = hi < self.pts.len() && self.pts[hi][0] - q[0] <= r;
            if !left_ok && !right_ok {
                break;
            }
            // expand whichever side is closer in x
            let take_left = match (left_ok, right_ok) {
                (true, true) => q[0] - self.pts[lo - 1][0] <= self.pts[hi][0] - q[0],
                (l, _) => l,
            };
            let p = if take_left {
                lo -= 1;
                self.pts[lo]
            } else {
                hi += 1;
                self.pts[hi - 1]
            };
            if !skipped && p == q {
                skipped = true;
                continue;
            }
            push(dist(p, q), &mut best);
        }
        bound(&best)
    }
}

/// Kozachenko–Leonenko entropy (nats) in two dimensions:
/// `ψ(n) - ψ(k) + log π + (2/n) Σ log ε_i`.
pub fn knn_entropy(points: &[[f64; 2]], k: usize) -> Result<f64> {
    let n = points.len();
    contract(k >= 1 && n > k, || format!("need more than {k} points, got {n}"))?;
    let sorted = SortedPoints::new(points);
    let mut sum_log = 0.0;
    for &p in points {
        let eps = sorted.kth(p, k, true);
        if eps <= 0.0 {
            return Err(Error::CoincidentPoints);
        }
        sum_log += eps.ln();
    }
    Ok(digamma(n as f64) - digamma(k as f64) + std::f64::consts::PI.ln() + 2.0 * sum_log / n as f64)
}

/// KL divergence `D(p ‖ q)` from samples `xs ~ p` and `ys ~ q`:
/// `(2/n) Σ log(ν_k(i) / ρ_k(i)) + log(m / (n - 1))`.
pub fn knn_kl(xs: &[[f64; 2]], ys: &[[f64; 2]], k: usize) -> Result<f64> {
    let (n, m) = (xs.len(), ys.len());
    contract(k >= 1 && n > k && m >= k, || {
        format!("need more than {k} samples on each side, got {n} and {m}")
    })?;
    let own = SortedPoints::new(xs);
    let other = SortedPoints::new(ys);
    let mut sum = 0.0;
    for &x in xs {
        let rho = own.kth(x, k, true);
        let nu = other.kth(x, k, false);
        if rho <= 0.0 || nu <= 0.0 {
            return Err(Error::CoincidentPoints);
        }
        sum += (nu / rho).ln();
    }
    Ok(2.0 * sum / n as f64 + (m as f64 / (n as f64 - 1.0)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, seed: u64, scale: f64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [scale * rng.gen::<f64>(), scale * rng.gen::<f64>()]).collect()
    }

    #[test]
    fn kth_neighbour_matches_brute_force() {
        let pts = uniform(300, 1, 1.0);
        let sorted = SortedPoints::new(&pts);
        for &q in pts.iter().take(40) {
            let mut d: Vec<f64> = pts.iter().map(|&p| dist(p, q)).collect();
            d.sort_by(f64::total_cmp);
            // d[0] is the point itself
            assert_eq!(sorted.kth(q, 3, true), d[3]);
            assert_eq!(sorted.kth(q, 3, false), d[2]);
        }
    }

    #[test]
    fn unit_square_entropy_is_zero() {
        let mean: f64 = (0..10)
            .map(|seed| knn_entropy(&uniform(4096, seed, 1.0), 3).unwrap())
            .sum::<f64>()
            / 10.0;
        assert!(mean.abs() < 0.1, "{mean}");
        // scaling by 2 adds log 4
        let h2 = knn_entropy(&uniform(4096, 0, 2.0), 3).unwrap();
        assert!((h2 - 4f64.ln()).abs() < 0.1);
    }

    #[test]
    fn kl_of_identical_distributions_is_near_zero() {
        let kl = knn_kl(&uniform(4096, 3, 1.0), &uniform(4096, 4, 1.0), 3).unwrap();
        assert!(kl.abs() < 0.15, "{kl}");
    }

    #[test]
    fn kl_of_nested_squares() {
        // p uniform on [0,1]², q uniform on [0,2]²: D(p‖q) = log 4
        let kl = knn_kl(&uniform(4096, 5, 1.0), &uniform(4096, 6, 2.0), 3).unwrap();
        assert!((kl - 4f64.ln()).abs() < 0.15, "{kl}");
    }

    #[test]
    fn coincident_points_are_an_error() {
        let pts = vec![[0.0, 0.0]; 8];
        assert!(matches!(knn_entropy(&pts, 3), Err(Error::CoincidentPoints)));
        assert!(knn_entropy(&pts[..3], 3).is_err());
    }
}
