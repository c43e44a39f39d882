//! Deterministic parameter initialization.

use crate::precision::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Uniform in [-bound, bound].
pub fn uniform<T: Real>(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
    Tensor::parameter(shape, data).expect("shape/data agree by construction")
}

/// Kaiming-style uniform with bound `1/sqrt(fan_in)` (conv and linear default).
pub fn kaiming<T: Real>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    uniform(rng, shape, 1.0 / (fan_in as f64).sqrt())
}

pub fn zeros_param<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::parameter(shape, vec![T::ZERO; shape.iter().product()]).expect("valid")
}

pub fn ones_param<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::parameter(shape, vec![T::ONE; shape.iter().product()]).expect("valid")
}

/// Non-trainable buffer filled with a constant (running statistics).
pub fn buffer<T: Real>(shape: &[usize], value: f64) -> Tensor<T> {
    Tensor::full(shape, T::from_f64(value))
}

/// Named parameter list builder shared by all blocks.
pub type Named<T> = Vec<(String, Tensor<T>)>;

pub fn push<T: Real>(out: &mut Named<T>, prefix: &str, name: &str, t: &Tensor<T>) {
    out.push((format!("{prefix}.{name}"), t.clone()));
}
