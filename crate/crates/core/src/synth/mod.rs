//! Synthetic tasks with a known conditional law `p(s | x)`, and a small grid
//! world whose agents see only part of the global state.

mod aux;
mod dataset;
mod gmm;
mod grid;

pub use aux::{build_history_aux, build_joint_aux};
pub use dataset::{Dataset, DatasetMeta, Sample, StateDims, TaskSpec};
pub(crate) use gmm::sq_dist;
pub use gmm::{make_bimodal_task, make_unimodal_task, AffineMode, ConditionalGMM};
pub use grid::{AuxMode, GridConfig, GridWorld, Landmark, CELL_FEATURES};
