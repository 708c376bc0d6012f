//! Tabular state encoders trained with the expectile loss on embedding distances.
//!
//! Gradients are written out by hand for the small layer menu used here
//! (affine maps, rectification, unit normalization and the two distances).

mod encoder;
mod train;

pub use encoder::{distance_table, effective_dimension, one_hot, DistanceKind, Encoder, ForwardCache};
pub use train::{
    expectile_loss_batch, gradient_check, kink_margin, log_to_csv, mean_residual, residual_trace, train, Checkpoint,
    LogRow, TargetEncoder, TrainConfig, TrainOutcome, DIVERGENCE_LOSS, EFFECTIVE_DIM_DELTA, LOG_HEADER,
};
