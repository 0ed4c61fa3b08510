//! Task embeddings and the ball reparameterisation `z' = z / (‖z‖ + 1)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::norm;
use crate::scalar::Scalar;

/// Below this temperature a soft policy degenerates to the greedy one.
pub const MIN_TEMPERATURE: f64 = 1e-6;

pub fn reparameterize<T: Scalar>(z_raw: &[T]) -> Vec<T> {
    let scale = T::one() / (norm(z_raw) + T::one());
    z_raw.iter().map(|&x| x * scale).collect()
}

/// Inverse of [`reparameterize`]; requires `‖z‖ < 1`.
pub fn unreparameterize<T: Scalar>(z: &[T]) -> Vec<T> {
    let scale = T::one() / (T::one() - norm(z));
    z.iter().map(|&x| x * scale).collect()
}

/// `1 - ‖z‖` and whether it hit the clamp.
pub fn temperature<T: Scalar>(z: &[T]) -> (T, bool) {
    let t = T::one() - norm(z);
    let floor = T::lit(MIN_TEMPERATURE);
    if t <= floor {
        (floor, true)
    } else {
        (t, false)
    }
}

pub fn scaled<T: Scalar>(z: &[T], k: T) -> Vec<T> {
    z.iter().map(|&x| x * k).collect()
}

/// Uniform direction on the unit sphere.
pub fn sample_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&g);
        if n > 1e-12 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform point in the unit ball: direction × `u^{1/d}`.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let dir = sample_sphere(rng, d);
    let r = rng.gen::<f64>().powf(1.0 / d as f64);
    dir.into_iter().map(|x| x * r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reparameterize_examples() {
        let z = reparameterize(&[3.0f64, 4.0]);
        assert!((z[0] - 0.5).abs() < 1e-15 && (z[1] - 4.0 / 6.0).abs() < 1e-15);
        assert!((norm(&z) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(reparameterize(&[0.0, 0.0]), vec![0.0, 0.0]);
        let back = unreparameterize(&z);
        assert!((back[0] - 3.0).abs() < 1e-12 && (back[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn norm_grows_monotonically_towards_one() {
        let mut prev = 0.0;
        for k in 1..60 {
            let n = norm(&reparameterize(&[1.5f64.powi(k), 0.0]));
            assert!(n > prev && n < 1.0);
            prev = n;
        }
    }

    #[test]
    fn temperature_clamps_near_the_sphere() {
        assert_eq!(temperature(&[0.6, 0.8]), (MIN_TEMPERATURE, true));
        let (t, clamped) = temperature(&[0.3f64, 0.4]);
        assert!(!clamped && (t - 0.5f64).abs() < 1e-15);
    }

    #[test]
    fn ball_samples_cover_radii_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 2;
        let n = 20_000;
        let inner = (0..n)
            .filter(|_| norm(&sample_ball(&mut rng, d)) < 0.5)
            .count() as f64;
        // P(r < 0.5) = 0.25 in two dimensions
        let sd = (0.25 * 0.75 / n as f64).sqrt();
        assert!((inner / n as f64 - 0.25).abs() < 4.0 * sd);
        let s = sample_sphere(&mut rng, 5);
        assert!((norm(&s) - 1.0).abs() < 1e-12);
    }
}
