//! Single critic and generator updates.

use crate::autodiff::{gradient_penalty, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::TrainingPair;
use crate::models::{
    condition_tensor, critic_forward, generator_forward, Critic, CriticConfig, Generator,
    GeneratorConfig, NoiseMode,
};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::adam::Adam;
use super::config::{LipschitzMode, TrainConfig};

const STREAM_EPSILON: u64 = 0xE95;
const STREAM_NOISE: u64 = 0x401;

/// Loss nodes of one critic evaluation.
pub struct CriticTerms {
    pub loss: Var,
    /// `D(real) − D(fake)`.
    pub wasserstein: Var,
    pub gp: Var,
}

/// `D(fake) − D(real) + GP` on a tape, for any critic `d(tape, candidate,
/// condition)`.
pub fn critic_objective<T, F>(
    tape: &mut Tape<T>,
    mut d: F,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    condition: &Tensor<T>,
    epsilon: T,
    lambda: T,
) -> Result<CriticTerms>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, Var, Var) -> Result<Var>,
{
    let cond = tape.constant(condition.clone());
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let d_real = d(tape, r, cond)?;
    let d_fake = d(tape, f, cond)?;
    let wasserstein = tape.sub(d_real, d_fake)?;
    let gp = gradient_penalty(tape, |t, x| d(t, x, cond), real, fake, epsilon, lambda)?;
    let neg = tape.scale(wasserstein, -T::one());
    let loss = tape.add(neg, gp)?;
    Ok(CriticTerms {
        loss,
        wasserstein,
        gp,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStepLoss {
    pub loss: f64,
    pub wasserstein: f64,
    pub gp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorStepLoss {
    pub loss: f64,
    pub l1: f64,
}

/// Generator, critic and both optimizers.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub generator: Generator<T>,
    pub critic: Critic<T>,
    pub config: TrainConfig,
    pub gen_opt: Adam<T>,
    pub critic_opt: Adam<T>,
    /// Generator steps completed.
    pub step: u64,
    /// Critic steps completed.
    pub critic_steps: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(gen: GeneratorConfig, critic: CriticConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if critic.footprint != gen.output_window() || critic.in_channels != 2 * gen.out_channels {
            return Err(Error::InvalidArgument(format!(
                "critic footprint {:?} does not accept generator output {:?}",
                critic.footprint,
                gen.output_window()
            )));
        }
        let generator = Generator::new(gen, config.seed)?;
        let critic = Critic::new(critic, config.seed.wrapping_add(1))?;
        Ok(Self::from_parts(generator, critic, config))
    }

    pub fn from_parts(generator: Generator<T>, critic: Critic<T>, config: TrainConfig) -> Self {
        let gen_opt = Adam::new(config.generator_adam, generator.params.tensors());
        let critic_opt = Adam::new(config.critic_adam, critic.params.tensors());
        Self {
            generator,
            critic,
            config,
            gen_opt,
            critic_opt,
            step: 0,
            critic_steps: 0,
        }
    }

    fn noise(&self, counter: u64, salt: u64) -> NoiseMode {
        if self.config.train_noise && self.generator.config.noise_enabled {
            let mut g = rng::stream(self.config.seed, STREAM_NOISE + salt, counter);
            NoiseMode::Seeded(rand::Rng::random(&mut g))
        } else {
            NoiseMode::Zero
        }
    }

    fn check_finite(&self, what: &str, values: &[f64], pair: &TrainingPair<T>) -> Result<()> {
        if values.iter().all(|v| v.is_finite()) {
            return Ok(());
        }
        let (lo, hi) = pair.input.min_max();
        let norms: Vec<String> = self
            .generator
            .params
            .norms()
            .into_iter()
            .chain(self.critic.params.norms())
            .map(|(n, v)| format!("{n}={v:.3e}"))
            .collect();
        Err(Error::NonFinite {
            step: self.step,
            diagnostic: format!(
                "{what} losses {values:?}; input t={} lon_start={} range [{}, {}]; parameter norms: {}",
                pair.timestep,
                pair.lon_start,
                lo,
                hi,
                norms.join(", ")
            ),
        })
    }

    /// Critic loss and parameter gradients for one pair; `draw` keys the
    /// interpolation weight and generator noise.
    fn critic_gradients(
        &self,
        pair: &TrainingPair<T>,
        draw: u64,
    ) -> Result<(CriticStepLoss, Vec<Tensor<T>>)> {
        let noise = self.noise(draw, 0);
        let fake = self.generator.forward(&pair.input, noise)?;
        let cond = condition_tensor(&pair.input)?;
        let eps = T::lit(rng::uniform(self.config.seed, STREAM_EPSILON, draw));
        let lambda = match self.config.mode {
            LipschitzMode::Gp => T::lit(self.config.lambda),
            LipschitzMode::Clip => T::zero(),
        };

        let mut tape = Tape::new();
        let bound = self.critic.params.bind(&mut tape, true);
        let cfg = &self.critic.config;
        let terms = critic_objective(
            &mut tape,
            |t, x, c| critic_forward(t, &bound, cfg, x, c),
            &pair.target,
            &fake,
            &cond,
            eps,
            lambda,
        )?;
        let out = CriticStepLoss {
            loss: tape.item(terms.loss).to_f64_lossy(),
            wasserstein: tape.item(terms.wasserstein).to_f64_lossy(),
            gp: tape.item(terms.gp).to_f64_lossy(),
        };
        self.check_finite("critic", &[out.loss, out.wasserstein, out.gp], pair)?;
        let grads = tape.backward(terms.loss)?;
        Ok((out, bound.collect_grads(&grads)))
    }

    /// One critic update on `pair`. Generator parameters are untouched.
    pub fn critic_step(&mut self, pair: &TrainingPair<T>) -> Result<CriticStepLoss> {
        self.critic_step_batch(&[pair])
    }

    /// One critic update with losses and gradients averaged over `batch`.
    pub fn critic_step_batch(&mut self, batch: &[&TrainingPair<T>]) -> Result<CriticStepLoss> {
        let n = batch.len() as u64;
        let mut total: Option<(CriticStepLoss, Vec<Tensor<T>>)> = None;
        for (i, pair) in batch.iter().enumerate() {
            let (l, g) = self.critic_gradients(pair, self.critic_steps * n + i as u64)?;
            total = Some(match total {
                None => (l, g),
                Some((acc, ga)) => (
                    CriticStepLoss {
                        loss: acc.loss + l.loss,
                        wasserstein: acc.wasserstein + l.wasserstein,
                        gp: acc.gp + l.gp,
                    },
                    sum_grads(ga, &g)?,
                ),
            });
        }
        let (l, g) = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let inv = 1.0 / n as f64;
        let g = scale_grads(g, inv);
        self.critic_opt.step(self.critic.params.tensors_mut(), &g)?;
        if self.config.mode == LipschitzMode::Clip {
            let c = T::lit(self.config.clip_c);
            for p in self.critic.params.tensors_mut() {
                for x in p.data_mut() {
                    *x = x.max(-c).min(c);
                }
            }
        }
        self.critic_steps += 1;
        Ok(CriticStepLoss {
            loss: l.loss * inv,
            wasserstein: l.wasserstein * inv,
            gp: l.gp * inv,
        })
    }

    /// Generator loss `−D(fake, cond)` and its parameter gradients, without
    /// applying them.
    pub fn generator_gradients(
        &self,
        pair: &TrainingPair<T>,
        noise: NoiseMode,
    ) -> Result<(GeneratorStepLoss, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let gb = self.generator.params.bind(&mut tape, true);
        let cb = self.critic.params.bind(&mut tape, false);
        let x = tape.constant(pair.input.clone());
        let fake = generator_forward(&mut tape, &gb, &self.generator.config, x, noise)?;
        let cond = condition_tensor(&pair.input)?;
        let cond = tape.constant(cond);
        let score = critic_forward(&mut tape, &cb, &self.critic.config, fake, cond)?;
        let loss = tape.scale(score, -T::one());
        let l1 = tape.value(fake).mean_abs_diff(&pair.target)?.to_f64_lossy();
        let out = GeneratorStepLoss {
            loss: tape.item(loss).to_f64_lossy(),
            l1,
        };
        self.check_finite("generator", &[out.loss, out.l1], pair)?;
        let grads = tape.backward(loss)?;
        Ok((out, gb.collect_grads(&grads)))
    }

    /// One generator update on `pair`. Critic parameters are untouched.
    pub fn generator_step(&mut self, pair: &TrainingPair<T>) -> Result<GeneratorStepLoss> {
        self.generator_step_batch(&[pair])
    }

    pub fn generator_step_batch(&mut self, batch: &[&TrainingPair<T>]) -> Result<GeneratorStepLoss> {
        let n = batch.len() as u64;
        let mut total: Option<(GeneratorStepLoss, Vec<Tensor<T>>)> = None;
        for (i, pair) in batch.iter().enumerate() {
            let noise = self.noise(self.step * n + i as u64, 1);
            let (l, g) = self.generator_gradients(pair, noise)?;
            total = Some(match total {
                None => (l, g),
                Some((acc, ga)) => (
                    GeneratorStepLoss {
                        loss: acc.loss + l.loss,
                        l1: acc.l1 + l.l1,
                    },
                    sum_grads(ga, &g)?,
                ),
            });
        }
        let (l, g) = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let inv = 1.0 / n as f64;
        let g = scale_grads(g, inv);
        self.gen_opt.step(self.generator.params.tensors_mut(), &g)?;
        self.step += 1;
        Ok(GeneratorStepLoss {
            loss: l.loss * inv,
            l1: l.l1 * inv,
        })
    }

    /// L1 between the zero-noise generator output and the target.
    pub fn l1(&self, pair: &TrainingPair<T>) -> Result<f64> {
        let fake = self.generator.forward(&pair.input, NoiseMode::Zero)?;
        Ok(fake.mean_abs_diff(&pair.target)?.to_f64_lossy())
    }
}

fn sum_grads<T: Scalar>(a: Vec<Tensor<T>>, b: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| x.zip_map(y, |p, q| p + q))
        .collect()
}

fn scale_grads<T: Scalar>(g: Vec<Tensor<T>>, s: f64) -> Vec<Tensor<T>> {
    if s == 1.0 {
        return g;
    }
    let s = T::lit(s);
    g.into_iter().map(|t| t.map(|x| x * s)).collect()
}
