//! Conditional latent diffusion for reconstructing a hidden global state from
//! partial observations, plus the tooling to check how well it does.

// `!(v >= 0.0)` is how parameter checks reject NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod latent;
pub mod model;
pub mod net;
pub mod rng;
pub mod schedule;
pub mod synth;

pub use error::{Error, Result};
pub use model::{LatentDiffusionModel, ModelConfig, ModelDims, TrainConfig, TrainHistory};
pub use schedule::{DiffusionSchedule, ScheduleKind, ScheduleSpec};
pub use synth::{Dataset, Sample, TaskSpec};
