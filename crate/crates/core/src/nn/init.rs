use ndarray::{ArrayD, IxDyn};
use rand::Rng;

/// Half-width `√(6 / fan_in)` of the He-uniform distribution.
pub fn he_bound(fan_in: usize) -> f64 {
    assert!(fan_in > 0, "fan_in must be positive");
    (6.0 / fan_in as f64).sqrt()
}

/// I.i.d. samples from `U[−√(6/fan_in), √(6/fan_in)]`.
pub fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<f64> {
    let b = he_bound(fan_in);
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-b..=b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_values() {
        assert_eq!(he_bound(6), 1.0);
        assert!((he_bound(24) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn draws_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = he_uniform(&[100_000], 10, &mut rng);
        let b = he_bound(10);
        assert!(w.iter().all(|v| v.abs() <= b));
        let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.99 * b);
        let mean = w.mean().unwrap();
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn seeded() {
        let a = he_uniform(&[4, 5], 5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = he_uniform(&[4, 5], 5, &mut ChaCha8Rng::seed_from_u64(9));
        let c = he_uniform(&[4, 5], 5, &mut ChaCha8Rng::seed_from_u64(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
