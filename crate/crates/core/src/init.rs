//! Parameter initializers.

use rand::Rng;

use crate::autodiff::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))` for a `rows × cols` matrix
/// applied as `M·x` (fan_in = cols, fan_out = rows).
pub fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
