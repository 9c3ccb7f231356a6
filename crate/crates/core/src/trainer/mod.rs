//! Optimization: AdamW, global-norm clipping, plateau scheduling and the training loop.

mod fit;
mod optim;
mod schedule;

pub use fit::{
    batch_tensors, predict_raw, to_raw, train, write_log, EpochRecord, StepReport, TrainConfig, TrainOutcome, Trainer,
    ValReport,
};
pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use schedule::{replay, Plateau, Verdict};
