//! Dataset-level training loop, checkpoints and the overfit harness.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::prep::rotate_lon;
use crate::grid::{extract_pair, DatasetManifest, PairGeometry, ShellGrid, TrainingPair};
use crate::models::checkpoint::{read_container, write_container};
use crate::models::{Checkpoint, Critic, CriticConfig, GeneratorConfig};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::adam::AdamConfig;
use super::config::{RunConfig, TrainConfig};
use super::metrics::{truncate_metrics, MetricsLog, MetricsRecord};
use super::step::Trainer;

const STREAM_ROTATION: u64 = 0x207;
const STREAM_SHUFFLE: u64 = 0x5F1;

/// Header of the optimizer sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    kind: String,
    step: u64,
    critic_steps: u64,
    fingerprint: String,
    generator_t: u64,
    critic_t: u64,
    generator_adam: AdamConfig,
    critic_adam: AdamConfig,
    train: TrainConfig,
}

/// Sidecar path for a model checkpoint path.
pub fn optimizer_path(model: &Path) -> PathBuf {
    let stem = model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    model.with_file_name(format!("{stem}.optim.egw"))
}

impl<T: Scalar> Trainer<T> {
    pub fn checkpoint(&self, epoch: u64, stats_ref: Option<String>) -> Checkpoint<T> {
        Checkpoint {
            step: self.step,
            epoch,
            stats_ref,
            generator: self.generator.clone(),
            critic: Some((self.critic.config.clone(), self.critic.params.clone())),
        }
    }

    pub fn optimizer_bytes(&self) -> Result<Vec<u8>> {
        let header = OptimizerHeader {
            kind: "optimizer".into(),
            step: self.step,
            critic_steps: self.critic_steps,
            fingerprint: self.checkpoint(0, None).fingerprint(),
            generator_t: self.gen_opt.t,
            critic_t: self.critic_opt.t,
            generator_adam: self.gen_opt.config,
            critic_adam: self.critic_opt.config,
            train: self.config.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut names = Vec::new();
        let mut tensors: Vec<&Tensor<T>> = Vec::new();
        for (prefix, store, opt) in [
            ("gen", &self.generator.params, &self.gen_opt),
            ("critic", &self.critic.params, &self.critic_opt),
        ] {
            for (i, n) in store.names().iter().enumerate() {
                names.push(format!("{prefix}.m/{n}"));
                tensors.push(&opt.m[i]);
                names.push(format!("{prefix}.v/{n}"));
                tensors.push(&opt.v[i]);
            }
        }
        write_container(&text, names.iter().map(String::as_str).zip(tensors))
    }

    /// Writes `<dir>/step_XXXXXXXX.egw` and its optimizer sidecar.
    pub fn save_state(&self, dir: &Path, epoch: u64, stats_ref: Option<String>) -> Result<PathBuf> {
        let path = dir.join(format!("step_{:08}.egw", self.step));
        self.checkpoint(epoch, stats_ref).save(&path)?;
        std::fs::write(optimizer_path(&path), self.optimizer_bytes()?)?;
        Ok(path)
    }

    /// Restores a trainer from a model checkpoint and its sidecar. The
    /// sidecar's training config is used unless `config` overrides it.
    pub fn load_state(path: &Path, config: Option<TrainConfig>) -> Result<Self> {
        let ck = Checkpoint::<T>::load(path)?;
        let (text, records) = read_container(&std::fs::read(optimizer_path(path))?)?;
        let header: OptimizerHeader =
            toml::from_str(&text).map_err(|e| Error::Format(format!("optimizer sidecar: {e}")))?;
        if header.kind != "optimizer" {
            return Err(Error::Format(format!("expected optimizer sidecar, got {:?}", header.kind)));
        }
        if header.fingerprint != ck.fingerprint() || header.step != ck.step {
            return Err(Error::Fingerprint {
                expected: ck.fingerprint(),
                found: header.fingerprint,
            });
        }
        let (critic_cfg, critic_params) = ck
            .critic
            .ok_or_else(|| Error::Format("checkpoint has no critic; cannot resume".into()))?;
        let config = config.unwrap_or(header.train);
        let mut t = Trainer::from_parts(
            ck.generator,
            Critic {
                config: critic_cfg,
                params: critic_params,
            },
            config,
        );
        let mut it = records.into_iter();
        for (prefix, store, opt) in [
            ("gen", &t.generator.params, &mut t.gen_opt),
            ("critic", &t.critic.params, &mut t.critic_opt),
        ] {
            for (i, n) in store.names().iter().enumerate() {
                for (kind, slot) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                    let want = format!("{prefix}.{kind}/{n}");
                    match it.next() {
                        Some((name, v)) if name == want && v.shape() == slot.shape() => {
                            *slot = v.cast()
                        }
                        _ => {
                            return Err(Error::Format(format!(
                                "optimizer sidecar lacks a matching {want}"
                            )))
                        }
                    }
                }
            }
        }
        t.gen_opt.t = header.generator_t;
        t.critic_opt.t = header.critic_t;
        t.step = header.step;
        t.critic_steps = header.critic_steps;
        Ok(t)
    }
}

/// Prepared grids and the deterministic draw → pair schedule.
pub struct PairSchedule<T> {
    grids: Vec<(ShellGrid<T>, ShellGrid<T>)>,
    geometry: PairGeometry,
    starts: Vec<usize>,
    seed: u64,
    augment: bool,
}

impl<T: Scalar> PairSchedule<T> {
    pub fn new(
        grids: Vec<(ShellGrid<T>, ShellGrid<T>)>,
        geometry: PairGeometry,
        config: &TrainConfig,
    ) -> Result<Self> {
        let lr_w = grids
            .first()
            .ok_or_else(|| Error::InvalidArgument("no prepared volumes to train on".into()))?
            .1
            .lon();
        Ok(Self {
            grids,
            geometry,
            starts: (0..lr_w).step_by(config.window_stride).collect(),
            seed: config.seed,
            augment: config.augment,
        })
    }

    pub fn pairs_per_epoch(&self) -> u64 {
        (self.grids.len() * self.starts.len()) as u64
    }

    pub fn epoch_of(&self, draw: u64) -> u64 {
        draw / self.pairs_per_epoch()
    }

    /// The training pair for global draw index `draw`.
    pub fn pair(&self, draw: u64) -> Result<TrainingPair<T>> {
        let per = self.pairs_per_epoch();
        let epoch = draw / per;
        let mut order: Vec<u64> = (0..per).collect();
        order.shuffle(&mut rng::stream(self.seed, STREAM_SHUFFLE, epoch));
        let idx = order[(draw % per) as usize] as usize;
        let (t, w) = (idx / self.starts.len(), idx % self.starts.len());
        let (hr, lr) = &self.grids[t];
        if !self.augment {
            return extract_pair(hr, lr, self.starts[w], &self.geometry);
        }
        let k = rng::below(self.seed, STREAM_ROTATION, draw, lr.lon()) as i64;
        let lr_rot = rotate_lon(lr, k)?;
        let hr_rot = rotate_lon(hr, 8 * k)?;
        extract_pair(&hr_rot, &lr_rot, self.starts[w], &self.geometry)
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub checkpoints: Vec<PathBuf>,
    pub metrics: PathBuf,
}

/// Trains over every prepared volume of `manifest`, writing checkpoints and
/// `metrics.csv` into `out`. With `resume`, continues from that checkpoint.
pub fn train(
    manifest: &DatasetManifest,
    base: &Path,
    run: &RunConfig,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    manifest.validate(base)?;
    if manifest.prepared.is_empty() {
        return Err(Error::InvalidArgument(
            "manifest has no prepared volumes; run prepare first".into(),
        ));
    }
    let critic_cfg = run.critic_config();
    let geometry = PairGeometry::new(run.generator.input_window)?;
    let mut grids = Vec::with_capacity(manifest.prepared.len());
    for i in 0..manifest.prepared.len() {
        grids.push(manifest.load_prepared::<f32>(base, i)?);
    }
    std::fs::create_dir_all(out)?;
    let metrics_path = out.join("metrics.csv");
    let mut trainer = match resume {
        Some(p) => {
            let t = Trainer::load_state(p, Some(run.train.clone()))?;
            truncate_metrics(&metrics_path, t.step)?;
            t
        }
        None => {
            if metrics_path.exists() {
                std::fs::remove_file(&metrics_path)?;
            }
            Trainer::new(run.generator.clone(), critic_cfg, run.train.clone())?
        }
    };
    train_loop(&mut trainer, grids, geometry, manifest.stats_digest(), out, resume.is_none())
}

fn train_loop(
    trainer: &mut Trainer<f32>,
    grids: Vec<(ShellGrid<f32>, ShellGrid<f32>)>,
    geometry: PairGeometry,
    stats_ref: Option<String>,
    out: &Path,
    initial_checkpoint: bool,
) -> Result<TrainSummary> {
    let cfg = trainer.config.clone();
    let schedule = PairSchedule::new(grids, geometry, &cfg)?;
    let per_step = (cfg.critic_steps_per_gen * cfg.batch_size) as u64;
    let mut total = cfg.epochs as u64 * schedule.pairs_per_epoch() / per_step;
    if let Some(m) = cfg.max_steps {
        total = total.min(m);
    }
    let metrics_path = out.join("metrics.csv");
    let mut log = MetricsLog::append(&metrics_path)?;
    let mut checkpoints = Vec::new();
    if initial_checkpoint {
        checkpoints.push(trainer.save_state(out, 0, stats_ref.clone())?);
    }
    let started = Instant::now();
    while trainer.step < total {
        let first = trainer.step * per_step;
        let epoch = schedule.epoch_of(first);
        let mut critic = None;
        let mut last = Vec::new();
        for j in 0..cfg.critic_steps_per_gen {
            let offset = first + (j * cfg.batch_size) as u64;
            let batch: Vec<TrainingPair<f32>> = (0..cfg.batch_size as u64)
                .map(|i| schedule.pair(offset + i))
                .collect::<Result<_>>()?;
            let refs: Vec<&TrainingPair<f32>> = batch.iter().collect();
            critic = Some(trainer.critic_step_batch(&refs)?);
            last = batch;
        }
        let refs: Vec<&TrainingPair<f32>> = last.iter().collect();
        let gen = trainer.generator_step_batch(&refs)?;
        let critic = critic.expect("at least one critic step");
        log.write(&MetricsRecord {
            step: trainer.step,
            epoch,
            critic_loss: critic.loss,
            wasserstein: critic.wasserstein,
            gp: critic.gp,
            gen_loss: gen.loss,
            l1: gen.l1,
            wall_time: started.elapsed().as_secs_f64(),
        })?;
        let next_epoch = schedule.epoch_of(trainer.step * per_step);
        let periodic = cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0;
        if periodic || next_epoch != epoch || trainer.step == total {
            checkpoints.push(trainer.save_state(out, epoch, stats_ref.clone())?);
        }
    }
    Ok(TrainSummary {
        steps: trainer.step,
        checkpoints,
        metrics: metrics_path,
    })
}

/// Trains on one fixed pair with augmentation and noise off and returns the
/// zero-noise L1 trace: entry 0 before training, entry k after k steps.
pub fn overfit_single<T: Scalar>(
    pair: &TrainingPair<T>,
    steps: usize,
    generator: GeneratorConfig,
    critic: CriticConfig,
    config: TrainConfig,
) -> Result<Vec<f64>> {
    let config = TrainConfig {
        augment: false,
        train_noise: false,
        ..config
    };
    let mut t = Trainer::<T>::new(generator, critic, config)?;
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        for _ in 0..t.config.critic_steps_per_gen {
            t.critic_step(pair)?;
        }
        // noise is off and the critic step leaves the generator alone, so
        // the step's L1 is the L1 after the previous step
        trace.push(t.generator_step(pair)?.l1);
    }
    trace.push(t.l1(pair)?);
    Ok(trace)
}
