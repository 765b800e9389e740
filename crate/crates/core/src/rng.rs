//! Counter-based random streams: any draw is a pure function of
//! `(seed, stream id, step)`, so noise tensors can be regenerated on demand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Generator positioned at the start of stream `(stream, step)` for `seed`.
pub fn stream(seed: u64, stream: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 24 bits of stream id, 40 bits of step
    rng.set_stream(((stream & 0xFF_FFFF) << 40) | (step & 0xFF_FFFF_FFFF));
    rng
}

/// Standard-normal tensor for `(seed, stream, step)`.
pub fn gaussian<T: Scalar>(seed: u64, stream_id: u64, step: u64, shape: &[usize]) -> Tensor<T> {
    let mut rng = stream(seed, stream_id, step);
    Tensor::from_fn(shape, |_| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Tensor of uniform draws in `[0, 1)` for `(seed, stream, step)`.
pub fn uniform_tensor<T: Scalar>(seed: u64, stream_id: u64, step: u64, shape: &[usize]) -> Tensor<T> {
    let mut rng = stream(seed, stream_id, step);
    Tensor::from_fn(shape, |_| T::lit(rng.random::<f64>()))
}

/// One uniform draw in `[0, 1)` for `(seed, stream, step)`.
pub fn uniform(seed: u64, stream_id: u64, step: u64) -> f64 {
    stream(seed, stream_id, step).random::<f64>()
}

/// One integer draw in `[0, n)` for `(seed, stream, step)`.
pub fn below(seed: u64, stream_id: u64, step: u64, n: usize) -> usize {
    stream(seed, stream_id, step).random_range(0..n)
}
