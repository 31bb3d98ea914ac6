//! Seeded parameter initialization.
//!
//! Kaiming-uniform fan-in for conv/linear weights (relu gain), zeros for
//! biases, ones/zeros for batchnorm scale/shift. All draws come from a caller
//! provided ChaCha20 stream so a model build is a pure function of its seed.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::tensor::{Parameter, Tensor};

/// Uniform(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform(
    rng: &mut ChaCha20Rng,
    name: impl Into<String>,
    shape: &[usize],
    fan_in: usize,
) -> Parameter {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Parameter::new(name, Tensor::new(data, shape))
}

pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Parameter {
    Parameter::new(name, Tensor::zeros(shape))
}

pub fn ones(name: impl Into<String>, shape: &[usize]) -> Parameter {
    Parameter::new(name, Tensor::ones(shape))
}
