//! Central finite-difference gradient checking.
//!
//! Numeric gradients are computed from forward evaluations only, on fresh
//! inference tapes, so they never share code with the backward rules they
//! check.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of one gradient check, one entry per input.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Tensor<f64>>,
    pub numeric: Vec<Tensor<f64>>,
}

impl GradCheck {
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` per input (0 when both vanish).
    pub fn relative_errors(&self) -> Vec<f64> {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| relative_error(a, n))
            .collect()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors().into_iter().fold(0.0, f64::max)
    }
}

pub fn relative_error(a: &Tensor<f64>, n: &Tensor<f64>) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(n.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.l2_norm().max(n.l2_norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Evaluates `f` at `inputs` and returns its scalar value.
///
/// Inputs are recorded as differentiable leaves so `f` may itself take
/// input gradients (penalty-style objectives).
pub fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Graph("gradient check target is not a scalar".into()));
    }
    Ok(tape.item(out))
}

/// Compares backward-pass gradients of scalar `f` with central differences
/// of step `h` for every element of every input.
pub fn check<F>(inputs: &[Tensor<f64>], f: F, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let fp = evaluate(&probe, &f)?;
            probe[i].data_mut()[j] = x0 - h;
            let fm = evaluate(&probe, &f)?;
            probe[i].data_mut()[j] = x0;
            g.data_mut()[j] = (fp - fm) / (2.0 * h);
        }
        numeric.push(g);
    }
    Ok(GradCheck { analytic, numeric })
}
