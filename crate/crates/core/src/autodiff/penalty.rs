use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Tape, Var};

/// Keeps the norm differentiable when the input gradient vanishes.
const NORM_FLOOR: f64 = 1e-12;

/// `λ·(‖∇ critic(x̂)‖₂ − 1)²` at `x̂ = ε·real + (1−ε)·fake`.
///
/// The returned node is differentiable with respect to whatever parameters
/// `critic` reads from the tape.
pub fn gradient_penalty<T, F>(
    tape: &mut Tape<T>,
    mut critic: F,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    epsilon: T,
    lambda: T,
) -> Result<Var>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    if real.shape() != fake.shape() {
        return shape_err(format!(
            "gradient penalty: real {:?} vs fake {:?}",
            real.shape(),
            fake.shape()
        ));
    }
    if lambda == T::zero() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let mixed = real.zip_map(fake, |r, f| epsilon * r + (T::one() - epsilon) * f)?;
    let x = tape.leaf(mixed, true);
    let score = critic(tape, x)?;
    let g = tape.input_gradient(score, x, true)?;
    let g2 = tape.square(g)?;
    let sq = tape.sum(g2);
    let sq = tape.add_scalar(sq, T::lit(NORM_FLOOR));
    let norm = tape.sqrt(sq);
    let dev = tape.add_scalar(norm, -T::one());
    let dev2 = tape.square(dev)?;
    Ok(tape.scale(dev2, lambda))
}
