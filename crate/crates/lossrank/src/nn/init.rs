//! Weight initialization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::tensor::Tensor;

/// He initialization: zero-mean Gaussian with std sqrt(2 / fan_in).
///
/// For a `[in, out]` weight matrix the fan-in is the first extent; for a
/// vector shape it is the single extent.
pub fn he_init<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Tensor {
    let fan_in = shape[0] as f64;
    let std = (2.0 / fan_in).sqrt();
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        data.push(z * std);
    }
    Tensor::new(shape, data).expect("shape/data length agree by construction")
}
