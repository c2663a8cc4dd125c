use rand::Rng;

use crate::{Scalar, Tensor};

/// Uniform samples in `[-bound, bound]`.
pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        if bound > 0.0 {
            T::of(rng.gen_range(-bound..=bound))
        } else {
            T::zero()
        }
    })
}

/// Default convolution/linear init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}
