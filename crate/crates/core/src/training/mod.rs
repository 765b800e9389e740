//! Adversarial training: optimizer, single steps, the dataset loop and the
//! overfit harness.

pub mod adam;
pub mod config;
pub mod metrics;
pub mod run;
pub mod step;

pub use adam::{adam_update, Adam, AdamConfig};
pub use config::{LipschitzMode, RunConfig, TrainConfig};
pub use metrics::{read_metrics, MetricsLog, MetricsRecord};
pub use run::{overfit_single, train, PairSchedule, TrainSummary};
pub use step::{critic_objective, CriticStepLoss, GeneratorStepLoss, Trainer};
