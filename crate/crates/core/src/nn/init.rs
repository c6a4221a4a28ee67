use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Zero-mean Gaussian weights with variance `2 / fan_in`.
pub fn he_init<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::DegenerateInput("he_init with fan_in = 0".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::of(z * std)
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}
