//! Training objective (on the tape) and evaluation metrics (on plain arrays).

mod loss;
mod metrics;

pub use loss::{wave_loss, LossNodes, LossWeights, Objective, SpectralLoss};
pub use metrics::{
    aggregate_channels, aggregate_metric, cftc, correlation, lsd, nmae, pearson, psd_kl, raw_mae, sci,
    subject_aggregate, Aggregate, Evaluator, SegmentMetrics, Sci, SCALAR_METRICS,
};
