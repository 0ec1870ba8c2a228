use rand::Rng;

use crate::Tensor;

/// Kaiming-uniform weights for a `fan_in x fan_out` layer with negative
/// slope `a = sqrt(5)` (the usual deep-learning default for linear layers):
/// `U(-b, b)` with `b = sqrt(1 / fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(fan_in, fan_out, data).expect("positive dims")
}
