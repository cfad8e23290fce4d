//! Weight initializers.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::tensor::{Real, Tensor};

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let a = glorot_bound(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-a, a).expect("finite glorot bound");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}
