use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transport::SampleSet;

fn set<T: Scalar>(n: usize, d: usize, mut draw: impl FnMut() -> f64) -> Result<SampleSet<T>> {
    let data = (0..n * d).map(|_| T::of(draw())).collect();
    SampleSet::new(Tensor::new(vec![n, d], data)?, 0)
}

/// `a ~ N(0, I)` and `b ~ N(δ·1, r·I)`, drawn one after the other from one seeded stream.
pub fn synth_gaussian_pair<T: Scalar>(
    n: usize,
    d: usize,
    delta: f64,
    ratio: f64,
    seed: u64,
) -> Result<(SampleSet<T>, SampleSet<T>)> {
    if !(ratio > 0.0) {
        return Err(Error::Contract(format!("variance ratio must be positive, got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = set(n, d, || rng.sample::<f64, _>(StandardNormal))?;
    let scale = ratio.sqrt();
    let b = set(n, d, || delta + scale * rng.sample::<f64, _>(StandardNormal))?;
    Ok((a, b))
}

/// `a ~ U[C′/2, C′]ᵈ` and `b ~ U[0, C′/4]ᵈ`.
pub fn synth_appendix_uniform_pair<T: Scalar>(
    c_prime: f64,
    d: usize,
    n: usize,
    seed: u64,
) -> Result<(SampleSet<T>, SampleSet<T>)> {
    if !(c_prime > 0.0) {
        return Err(Error::Contract(format!("C′ must be positive, got {c_prime}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = set(n, d, || rng.random_range(c_prime / 2.0..=c_prime))?;
    let b = set(n, d, || rng.random_range(0.0..=c_prime / 4.0))?;
    Ok((a, b))
}

/// `n` i.i.d. draws from `U[lo, hi]ᵈ`.
pub fn synth_uniform<T: Scalar>(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> Result<SampleSet<T>> {
    if !(hi > lo) {
        return Err(Error::Contract(format!("empty interval [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    set(n, d, || rng.random_range(lo..=hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{em_exact_1d, MomentVector};

    #[test]
    fn gaussian_shift_distance() {
        let (a, b) = synth_gaussian_pair::<f64>(4096, 1, 2.0, 1.0, 3).unwrap();
        let w = em_exact_1d(&a, &b).unwrap();
        assert!((w - 2.0).abs() < 0.1, "{w}");
        let (a, b) = synth_gaussian_pair::<f64>(4096, 1, 0.0, 1.0, 3).unwrap();
        assert!(em_exact_1d(&a, &b).unwrap() < 0.1);
    }

    #[test]
    fn gaussian_moments_within_band() {
        let n = 20_000;
        let (delta, r) = (0.7, 2.5);
        let (_, b) = synth_gaussian_pair::<f64>(n, 2, delta, r, 11).unwrap();
        let m = MomentVector::from_samples(&b);
        for j in 0..2 {
            assert!((m.mean[j] - delta).abs() < 3.0 * (r / n as f64).sqrt());
            // var of the sample variance of a normal is 2σ⁴/n
            assert!((m.var[j] - r).abs() < 3.0 * (2.0 * r * r / n as f64).sqrt());
        }
        assert!(synth_gaussian_pair::<f64>(4, 1, 0.0, 0.0, 1).is_err());
        assert_eq!(synth_gaussian_pair::<f64>(8, 2, 1.0, 1.0, 5).unwrap(), synth_gaussian_pair(8, 2, 1.0, 1.0, 5).unwrap());
    }

    #[test]
    fn uniform_box_supports_and_distance() {
        let (a, b) = synth_appendix_uniform_pair::<f64>(4.0, 3, 500, 1).unwrap();
        assert!(a.samples().data().iter().all(|&v| (2.0..=4.0).contains(&v)));
        assert!(b.samples().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (a, b) = synth_appendix_uniform_pair::<f64>(4.0, 1, 4096, 2).unwrap();
        let w = em_exact_1d(&a, &b).unwrap();
        assert!((w - 2.5).abs() < 0.1, "{w}");
        assert!(synth_appendix_uniform_pair::<f64>(0.0, 1, 4, 1).is_err());
    }
}
