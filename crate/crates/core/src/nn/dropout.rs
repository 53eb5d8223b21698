use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn sample_dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), rate: f64, rng: &mut R) -> Array2<f64> {
    assert!(
        (0.0..1.0).contains(&rate),
        "dropout rate must lie in [0, 1), got {rate}"
    );
    if rate == 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

pub fn dropout_mask(shape: (usize, usize), rate: f64, seed: u64) -> Array2<f64> {
    sample_dropout_mask(shape, rate, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_identity() {
        assert_eq!(dropout_mask((3, 4), 0.0, 1), Array2::<f64>::ones((3, 4)));
    }

    #[test]
    fn empirical_rate_and_mean() {
        let m = dropout_mask((100, 1000), 0.3, 7);
        let zeros = m.iter().filter(|&&x| x == 0.0).count() as f64 / m.len() as f64;
        assert!((zeros - 0.3).abs() < 0.01, "zero fraction {zeros}");
        let mean = m.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(m.iter().all(|&x| x == 0.0 || (x - 1.0 / 0.7).abs() < 1e-15));
    }
}
