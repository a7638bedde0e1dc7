//! Dense networks with hand-written reverse-mode gradients and an AdamW
//! optimizer. Every trainable function in the crate is one of these.

mod network;
mod optim;

pub use network::{mish, mish_grad, Activation, Network, Trace};
pub use optim::{AdamW, OptimizerConfig};
