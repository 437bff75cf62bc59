//! Learnable particle simulation with graph networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, reverse-mode autodiff tape, Adam, checkpoints
//! - [`graph`]: k-d tree and radius connectivity
//! - [`features`]: finite differences, wall features, normalization statistics
//! - [`model`]: encoder / processor / decoder network
//! - [`noise`]: training-time input corruption and target correction
//! - [`train`]: one-step supervised training loop
//! - [`rollout`]: semi-implicit Euler update and autoregressive rollouts
//! - [`metrics`]: MSE, Sinkhorn optimal transport, MMD
//! - [`datagen`]: toy ground-truth scenarios and the trajectory file format

pub mod datagen;
pub mod error;
pub mod experiment;
pub mod features;
pub mod graph;
pub mod json;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod rollout;
pub mod tensor;
pub mod train;

pub use datagen::{Dataset, Scenario, ScenarioKind, Trajectory};
pub use error::{GnsError, Result};
pub use features::{BoxBounds, Material, NormStats, ParticleState};
pub use graph::{EdgeList, KdTree};
pub use model::{EncoderVariant, GnsConfig, GnsModel};
pub use noise::{NoiseConfig, NoiseType};
pub use rollout::{Rollout, Simulator};
pub use tensor::{Tape, Tensor};
pub use train::TrainConfig;
