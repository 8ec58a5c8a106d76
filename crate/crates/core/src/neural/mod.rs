//! Small dense Q-networks with exact reverse-mode gradients.

mod checkpoint;
mod network;
mod optim;

pub use checkpoint::{read_orlw, write_orlw, ORLW_MAGIC, ORLW_VERSION};
pub use network::{Dense, ForwardCache, ForwardOutput, Gradients, HeadKind, QNetwork, RegMode};
pub use optim::{decayed_lr, LrAnchor, LrSchedule, Optimizer, OptimizerKind};
