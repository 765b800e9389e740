//! Generator and critic architectures, parameter storage and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod critic;
pub mod generator;
pub mod params;

pub use checkpoint::{deserialize_generator, serialize_generator, Checkpoint};
pub use config::{CriticConfig, GeneratorConfig, MIN_INPUT};
pub use critic::{build_critic, critic_forward, Critic};
pub use generator::{
    build_generator, condition_tensor, generator_forward, upsample_condition, Generator, NoiseMode,
};
pub use params::{count_params, Bound, ParamStore};
