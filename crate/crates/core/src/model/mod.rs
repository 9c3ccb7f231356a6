//! The reconstruction network: shared multi-kernel encoder, source embeddings,
//! per-target attention refined over a distance graph, block-wise mixing and a
//! transposed-convolution decoder with mixed skips.

mod checkpoint;
mod config;
mod net;
mod prior;

pub use checkpoint::{Checkpoint, CheckpointHeader, ParamEntry, CHECKPOINT_VERSION, MAGIC};
pub use config::ArchConfig;
pub use net::{update_running_stats, Forward, Mode, Network};
pub use prior::{default_tau, SpatialPrior};
