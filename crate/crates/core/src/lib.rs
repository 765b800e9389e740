//! Conditional Wasserstein GAN surrogate for volumetric fields on spherical
//! shells.
//!
//! The crate is generic over the element type ([`Scalar`]: `f32` or `f64`).
//! Training and inference use `f32`; gradient checks run in `f64`.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod inference;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
