//! Conditional Wasserstein critic: `[candidate ‖ condition]` → three blocks
//! of {valid 3³ conv, leaky relu, 2× mean pool} → global mean → affine.

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::CriticConfig;
use super::generator::config_fingerprint;
use super::params::{Bound, ParamStore};

pub fn build_critic<T: Scalar>(config: &CriticConfig, seed: u64) -> Result<ParamStore<T>> {
    config.validate()?;
    let mut store = ParamStore::new(config_fingerprint("critic", config));
    let mut cin = config.in_channels;
    for (i, &cout) in config.channels.iter().enumerate() {
        let w: Tensor<T> = rng::gaussian(seed, 0x1000 + i as u64, 0, &[cout, cin, 3, 3, 3]);
        let s = T::lit(1.0 / ((cin * 27) as f64).sqrt());
        store.insert(format!("b{}.w", i + 1), w.map(|x| x * s))?;
        store.insert(format!("b{}.b", i + 1), Tensor::zeros(&[cout]))?;
        cin = cout;
    }
    let w: Tensor<T> = rng::gaussian(seed, 0x1000 + 3, 0, &[cin]);
    let s = T::lit(1.0 / (cin as f64).sqrt());
    store.insert("head.w", w.map(|x| x * s))?;
    store.insert("head.b", Tensor::scalar(T::zero()))?;
    Ok(store)
}

/// Score of `candidate` given `condition`, both `V×footprint`.
pub fn critic_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bound<'_, T>,
    config: &CriticConfig,
    candidate: Var,
    condition: Var,
) -> Result<Var> {
    let want = config.in_channels / 2;
    for v in [candidate, condition] {
        match tape.shape(v) {
            &[c, d, h, w] if c == want && [d, h, w] == config.footprint => {}
            s => {
                return shape_err(format!(
                    "critic expects {want}×{:?}, got {s:?}",
                    config.footprint
                ))
            }
        }
    }
    let slope = T::lit(config.leaky_slope);
    let mut x = tape.concat_channels(&[candidate, condition])?;
    for i in 1..=3 {
        let w = params.var(&format!("b{i}.w"))?;
        let b = params.var(&format!("b{i}.b"))?;
        x = tape.conv3d_bias(x, w, b)?;
        x = tape.leaky_relu(x, slope)?;
        x = tape.mean_pool2(x)?;
    }
    let per = tape.value(x).len() / tape.shape(x)[0];
    let pooled = tape.channel_sum(x)?;
    let pooled = tape.scale(pooled, T::lit(1.0 / per as f64));
    let hw = params.var("head.w")?;
    let prod = tape.mul(pooled, hw)?;
    let s = tape.sum(prod);
    let hb = params.var("head.b")?;
    tape.add(s, hb)
}

/// A critic ready for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic<T> {
    pub config: CriticConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Critic<T> {
    pub fn new(config: CriticConfig, seed: u64) -> Result<Self> {
        let params = build_critic(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn score(&self, candidate: &Tensor<T>, condition: &Tensor<T>) -> Result<T> {
        let mut tape = Tape::inference();
        let bound = self.params.bind(&mut tape, false);
        let a = tape.constant(candidate.clone());
        let b = tape.constant(condition.clone());
        let s = critic_forward(&mut tape, &bound, &self.config, a, b)?;
        Ok(tape.item(s))
    }
}
