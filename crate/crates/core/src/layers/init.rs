use rand::Rng;
use rand_chacha::ChaCha8Rng;
use savp_tensor::{Element, Tensor};

pub type InitRng = ChaCha8Rng;

/// Draws from `U(-s, s)` with `s = sqrt(1 / fan_in)`.
pub fn uniform_fan_in<F: Element>(rng: &mut InitRng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let s = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.gen_range(-s..s))).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}
